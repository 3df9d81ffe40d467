use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use mrparse::edge::oracle_check;
use mrparse::eval::evaluate;
use mrparse::graph::{read_mrp_lines, serialize_mrp, write_companion, Framework, MrpGraph};
use mrparse::model::Model;
use mrparse::pipeline::{expect_framework, prepare, prepare_input, restore, Instance, Resources};
use mrparse::synth::gen_synthetic;
use mrparse::train::{load_corpus, parse_graph, read_file, sweep_weights, train, Dataset, TrainConfig};

#[derive(Parser)]
#[command(name = "mrparse", version, about = "Cross-framework meaning representation parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert gold graphs into model-space instances and corpus tables.
    Preprocess {
        #[arg(long)]
        framework: Framework,
        #[arg(long)]
        mrp: PathBuf,
        #[arg(long)]
        companion: PathBuf,
        #[arg(long)]
        ner: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from a key=value configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train once per loss-weight combination and report dev scores.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Values tried for each of the edge, label and property weights.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        grid: Vec<f64>,
    },
    /// Parse sentences with a trained model.
    Parse {
        #[arg(long)]
        model: PathBuf,
        /// MRP lines; only `id` and `input` are read.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        companion: PathBuf,
        #[arg(long)]
        ner: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn model-space instances back into MRP graphs.
    Postprocess {
        #[arg(long)]
        framework: Framework,
        /// Instance lines as written by `preprocess`.
        #[arg(long)]
        input: PathBuf,
        /// Directory holding the corpus tables.
        #[arg(long)]
        resources: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted graphs against gold graphs.
    Evaluate {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic corpus: `graphs.mrp`, `companion.conllu`, `ner.txt`.
    Synth {
        #[arg(long)]
        framework: Framework,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare mean-field posteriors with exact enumeration.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
    },
}

fn write_lines(path: &Path, graphs: &[MrpGraph]) -> Result<()> {
    let doc: String = graphs.iter().map(|g| serialize_mrp(g) + "\n").collect();
    fs::write(path, doc).with_context(|| format!("writing {}", path.display()))
}

fn read_graphs(path: &Path) -> Result<Vec<MrpGraph>> {
    Ok(read_mrp_lines(&read_file(path)?)?)
}

fn read_resources(dir: &Path) -> Result<Resources> {
    Resources::from_files(|k| fs::read_to_string(dir.join(format!("{k}.txt"))).ok())
        .with_context(|| format!("{} has no readable corpus tables", dir.display()))
}

fn preprocess(framework: Framework, mrp: &Path, companion: &Path, ner: Option<&Path>, out: &Path) -> Result<()> {
    let corpus = load_corpus(mrp, companion, ner)?;
    for (g, _) in &corpus {
        expect_framework(g, framework)?;
    }
    let res = Resources::build(framework, &corpus);
    fs::create_dir_all(out)?;
    let mut lines = String::new();
    for (g, c) in &corpus {
        let inst = prepare(g, c, &res).with_context(|| format!("graph {}", g.id))?;
        lines.push_str(&serde_json::to_string(&inst)?);
        lines.push('\n');
    }
    fs::write(out.join("instances.jsonl"), lines)?;
    for (name, doc) in res.to_files() {
        fs::write(out.join(format!("{name}.txt")), doc)?;
    }
    println!("{} instances written to {}", corpus.len(), out.display());
    Ok(())
}

fn run_training(cfg: &TrainConfig, out: &Path) -> Result<f64> {
    let data = Dataset::from_config(cfg)?;
    let (model, report) = train(cfg, &data)?;
    model.save(out)?;
    fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{} steps, best dev {:.4} at step {}; model in {}",
        report.steps,
        report.best_score,
        report.best_step,
        out.display()
    );
    Ok(report.best_score)
}

fn config_out(cfg: &TrainConfig) -> Result<PathBuf> {
    cfg.out.clone().context("the configuration needs `out = DIR`")
}

fn sweep(config: &Path, grid: &[f64]) -> Result<()> {
    let base = TrainConfig::parse(&read_file(config)?)?;
    let root = config_out(&base)?;
    let mut rows = String::from("edge\tlabel\tprop\tbest\n");
    for w in sweep_weights(grid) {
        let mut cfg = base.clone();
        cfg.model.weights = w;
        let out = root.join(format!("e{}-l{}-p{}", w.edge, w.label, w.prop));
        info!("sweep point {w:?}");
        let best = run_training(&cfg, &out)?;
        rows.push_str(&format!("{}\t{}\t{}\t{best:.4}\n", w.edge, w.label, w.prop));
    }
    fs::create_dir_all(&root)?;
    fs::write(root.join("sweep.tsv"), &rows)?;
    print!("{rows}");
    Ok(())
}

fn parse(model: &Path, input: &Path, companion: &Path, ner: Option<&Path>, out: &Path) -> Result<()> {
    let model = Model::load(model)?;
    let fw = model.cfg.framework;
    let mut pred = Vec::new();
    for (g, c) in load_corpus(input, companion, ner)? {
        let input = prepare_input(&g.id, fw, &g.input, &c, &model.resources);
        pred.push(parse_graph(&model, &input)?);
    }
    write_lines(out, &pred)?;
    println!("{} graphs written to {}", pred.len(), out.display());
    Ok(())
}

fn postprocess(framework: Framework, input: &Path, resources: &Path, out: &Path) -> Result<()> {
    let res = read_resources(resources)?;
    let mut graphs = Vec::new();
    for (i, line) in read_file(input)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let inst: Instance = serde_json::from_str(line).with_context(|| format!("{} line {}", input.display(), i + 1))?;
        if inst.input.framework != framework {
            bail!(
                "{} line {}: instance is {}, expected {framework}",
                input.display(),
                i + 1,
                inst.input.framework
            );
        }
        graphs.push(restore(&inst.input, &inst.target, &res).with_context(|| format!("instance {}", inst.input.id))?);
    }
    write_lines(out, &graphs)?;
    println!("{} graphs written to {}", graphs.len(), out.display());
    Ok(())
}

fn evaluate_files(gold: &Path, pred: &Path, json: bool) -> Result<()> {
    let gold = read_graphs(gold)?;
    let mut pred = read_graphs(pred)?;
    let order: BTreeMap<&str, usize> = gold.iter().enumerate().map(|(i, g)| (g.id.as_str(), i)).collect();
    pred.sort_by_key(|g| order.get(g.id.as_str()).copied().unwrap_or(usize::MAX));
    let report = evaluate(&gold, &pred)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report.to_json())?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn synth(framework: Framework, n: usize, seed: u64, out: &Path) -> Result<()> {
    let corpus = gen_synthetic(framework, n, seed);
    fs::create_dir_all(out)?;
    let graphs: Vec<MrpGraph> = corpus.iter().map(|(g, _)| g.clone()).collect();
    write_lines(&out.join("graphs.mrp"), &graphs)?;
    let sentences: Vec<_> = corpus.iter().map(|(_, c)| c.clone()).collect();
    fs::write(out.join("companion.conllu"), write_companion(&sentences))?;
    let ner: String = sentences.iter().map(|s| s.ner_tags.join(" ") + "\n").collect();
    fs::write(out.join("ner.txt"), ner)?;
    println!("{n} {framework} sentences written to {}", out.display());
    Ok(())
}

fn oracle(seed: u64, instances: usize, iterations: usize) -> Result<()> {
    let s = oracle_check(seed, instances, iterations)?;
    println!("{}", serde_json::to_string_pretty(&s)?);
    if s.factorized_max_error > 1e-9 {
        bail!(
            "factorized mean-field posteriors differ from exact marginals by {:e}",
            s.factorized_max_error
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Preprocess {
            framework,
            mrp,
            companion,
            ner,
            out,
        } => preprocess(framework, &mrp, &companion, ner.as_deref(), &out),
        Command::Train { config } => {
            let cfg = TrainConfig::parse(&read_file(&config)?)?;
            run_training(&cfg, &config_out(&cfg)?).map(|_| ())
        }
        Command::Sweep { config, grid } => sweep(&config, &grid),
        Command::Parse {
            model,
            input,
            companion,
            ner,
            out,
        } => parse(&model, &input, &companion, ner.as_deref(), &out),
        Command::Postprocess {
            framework,
            input,
            resources,
            out,
        } => postprocess(framework, &input, &resources, &out),
        Command::Evaluate { gold, pred, json } => evaluate_files(&gold, &pred, json),
        Command::Synth { framework, n, seed, out } => synth(framework, n, seed, &out),
        Command::OracleCheck {
            seed,
            instances,
            iterations,
        } => oracle(seed, instances, iterations),
    }
}
