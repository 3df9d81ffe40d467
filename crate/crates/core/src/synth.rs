//! Grammar-driven synthetic corpora with consistent annotations for every
//! framework.
//!
//! Sentences are either transitive (`NP verb NP [prep NP] .`) or control
//! constructions (`NP wants to VERB .`). Control sentences share their
//! subject between both predicates, which yields reentrancies (AMR, DM,
//! PSD, EDS) and remote edges (UCCA).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::graph::{CompanionSentence, CompanionToken, Framework, MrpEdge, MrpGraph, MrpNode};

const NOUNS: [&str; 10] = ["dog", "cat", "bird", "fox", "horse", "cow", "lion", "bear", "wolf", "duck"];
const ADJS: [&str; 6] = ["big", "small", "red", "old", "young", "happy"];
const DETS: [&str; 2] = ["the", "a"];
const VERBS: [(&str, &str); 6] = [
    ("chased", "chase"),
    ("saw", "see"),
    ("liked", "like"),
    ("fed", "feed"),
    ("followed", "follow"),
    ("found", "find"),
];
const CONTROL: [(&str, &str); 2] = [("wanted", "want"), ("tried", "try")];
const INFINITIVES: [&str; 4] = ["sleep", "run", "eat", "leave"];
const NAMES: [&str; 4] = ["Kim", "Sandy", "Lee", "Pat"];
const PLACES: [&str; 3] = ["New York", "Los Angeles", "Paris"];
const PREPS: [&str; 2] = ["near", "with"];

#[derive(Clone, Debug)]
struct Word {
    form: String,
    lemma: String,
    xpos: String,
    ner: String,
}

/// A noun phrase: token positions of its parts.
#[derive(Clone, Debug)]
struct Np {
    det: Option<usize>,
    adj: Option<usize>,
    /// Head token range, inclusive; longer than one token for places.
    head: (usize, usize),
    name: bool,
}

#[derive(Clone, Debug)]
enum Clause {
    Transitive {
        subj: Np,
        verb: usize,
        obj: Np,
        pp: Option<(usize, Np)>,
    },
    Control {
        subj: Np,
        verb: usize,
        to: usize,
        inf: usize,
    },
}

struct Sentence {
    words: Vec<Word>,
    clause: Clause,
    stop: usize,
}

impl Sentence {
    fn push(&mut self, form: &str, lemma: &str, xpos: &str, ner: &str) -> usize {
        self.words.push(Word {
            form: form.into(),
            lemma: lemma.into(),
            xpos: xpos.into(),
            ner: ner.into(),
        });
        self.words.len() - 1
    }

    fn text_and_tokens(&self) -> (String, Vec<CompanionToken>) {
        let mut text = String::new();
        let mut tokens = Vec::new();
        for (i, w) in self.words.iter().enumerate() {
            if i > 0 {
                text.push(' ');
            }
            let start = text.chars().count();
            text.push_str(&w.form);
            tokens.push(CompanionToken::new(&w.form, &w.lemma, &w.xpos, start));
        }
        (text, tokens)
    }
}

fn noun_phrase<R: Rng>(s: &mut Sentence, rng: &mut R, allow_name: bool) -> Np {
    if allow_name && rng.gen_bool(0.3) {
        let name = *NAMES.choose(rng).expect("nonempty");
        let t = s.push(name, name, "NNP", "B-PER");
        return Np {
            det: None,
            adj: None,
            head: (t, t),
            name: true,
        };
    }
    let det = DETS.choose(rng).expect("nonempty");
    let d = s.push(det, det, "DT", "O");
    let adj = rng.gen_bool(0.4).then(|| {
        let a = ADJS.choose(rng).expect("nonempty");
        s.push(a, a, "JJ", "O")
    });
    let n = NOUNS.choose(rng).expect("nonempty");
    let h = s.push(n, n, "NN", "O");
    Np {
        det: Some(d),
        adj,
        head: (h, h),
        name: false,
    }
}

fn place<R: Rng>(s: &mut Sentence, rng: &mut R) -> Np {
    let place = PLACES.choose(rng).expect("nonempty");
    let words: Vec<&str> = place.split(' ').collect();
    let first = s.words.len();
    for (k, w) in words.iter().enumerate() {
        s.push(w, w, "NNP", if k == 0 { "B-LOC" } else { "I-LOC" });
    }
    Np {
        det: None,
        adj: None,
        head: (first, s.words.len() - 1),
        name: true,
    }
}

fn sentence<R: Rng>(rng: &mut R, control_rate: f64) -> Sentence {
    let mut s = Sentence {
        words: Vec::new(),
        clause: Clause::Control {
            subj: Np {
                det: None,
                adj: None,
                head: (0, 0),
                name: false,
            },
            verb: 0,
            to: 0,
            inf: 0,
        },
        stop: 0,
    };
    let subj = noun_phrase(&mut s, rng, true);
    s.clause = if rng.gen_bool(control_rate) {
        let (form, lemma) = *CONTROL.choose(rng).expect("nonempty");
        let verb = s.push(form, lemma, "VBD", "O");
        let to = s.push("to", "to", "TO", "O");
        let inf = INFINITIVES.choose(rng).expect("nonempty");
        let inf = s.push(inf, inf, "VB", "O");
        Clause::Control { subj, verb, to, inf }
    } else {
        let (form, lemma) = *VERBS.choose(rng).expect("nonempty");
        let verb = s.push(form, lemma, "VBD", "O");
        let obj = noun_phrase(&mut s, rng, true);
        let pp = rng.gen_bool(0.3).then(|| {
            let p = PREPS.choose(rng).expect("nonempty");
            let p = s.push(p, p, "IN", "O");
            let np = if rng.gen_bool(0.5) {
                place(&mut s, rng)
            } else {
                noun_phrase(&mut s, rng, false)
            };
            (p, np)
        });
        Clause::Transitive { subj, verb, obj, pp }
    };
    s.stop = s.push(".", ".", ".", "O");
    s
}

struct Builder<'a> {
    g: MrpGraph,
    tokens: &'a [CompanionToken],
}

impl Builder<'_> {
    fn node(&mut self, label: &str, span: Option<(usize, usize)>) -> u32 {
        let id = self.g.nodes.len() as u32;
        let mut n = MrpNode::new(id, label);
        if let Some((a, b)) = span {
            n = n.with_anchor(self.tokens[a].start, self.tokens[b].end);
        }
        self.g.nodes.push(n);
        id
    }

    fn unlabeled(&mut self, span: Option<(usize, usize)>) -> u32 {
        let id = self.node("", span);
        self.g.nodes[id as usize].label = None;
        id
    }

    fn prop(&mut self, id: u32, k: &str, v: &str) {
        self.g.nodes[id as usize].properties.push((k.into(), v.into()));
    }

    fn edge(&mut self, s: u32, t: u32, label: &str) {
        self.g.edges.push(MrpEdge::new(s, t, label));
    }
}

fn frame(xpos: &str, control: bool) -> &'static str {
    match xpos {
        "VBD" if control => "v:e-i-h",
        "VBD" | "VB" => "v:e-i-p",
        "NN" => "n:x",
        "NNP" => "named:x-c",
        "JJ" => "a:e-p",
        "DT" => "q:i-h-h",
        "IN" => "p:e-u-i",
        _ => "_",
    }
}

fn bilexical(b: &mut Builder, s: &Sentence, psd: bool) {
    for (i, w) in s.words.iter().enumerate() {
        let id = b.node(&w.lemma, Some((i, i)));
        b.prop(id, "pos", &w.xpos);
        let control = matches!(s.clause, Clause::Control { verb, .. } if verb == i);
        b.prop(id, "frame", frame(&w.xpos, control));
    }
    let np = |b: &mut Builder, np: &Np| {
        let h = np.head.1 as u32;
        for k in np.head.0..np.head.1 {
            b.edge(h, k as u32, "compound");
        }
        if let Some(d) = np.det {
            if psd {
                b.edge(h, d as u32, "RSTR");
            } else {
                b.edge(d as u32, h, "BV");
            }
        }
        if let Some(a) = np.adj {
            if psd {
                b.edge(h, a as u32, "RSTR");
            } else {
                b.edge(a as u32, h, "ARG1");
            }
        }
        h
    };
    let (arg1, arg2) = if psd { ("ACT-arg", "PAT-arg") } else { ("ARG1", "ARG2") };
    match &s.clause {
        Clause::Transitive { subj, verb, obj, pp } => {
            let (sh, oh) = (np(b, subj), np(b, obj));
            let v = *verb as u32;
            b.edge(v, sh, arg1);
            b.edge(v, oh, arg2);
            if let Some((p, pnp)) = pp {
                let ph = np(b, pnp);
                if psd {
                    b.edge(v, ph, "LOC");
                } else {
                    b.edge(*p as u32, v, "ARG1");
                    b.edge(*p as u32, ph, "ARG2");
                }
            }
            b.g.tops = vec![v];
        }
        Clause::Control { subj, verb, inf, .. } => {
            let sh = np(b, subj);
            let (v, i) = (*verb as u32, *inf as u32);
            b.edge(v, sh, arg1);
            b.edge(v, i, arg2);
            b.edge(i, sh, arg1);
            b.g.tops = vec![v];
        }
    }
}

fn eds(b: &mut Builder, s: &Sentence) {
    let lemma = |i: usize| s.words[i].lemma.clone();
    let np = |b: &mut Builder, np: &Np| -> u32 {
        if np.name {
            let text: Vec<&str> = (np.head.0..=np.head.1).map(|k| s.words[k].form.as_str()).collect();
            let q = b.node("proper_q", Some(np.head));
            let n = b.node("named", Some(np.head));
            b.prop(n, "carg", &text.join(" "));
            b.edge(q, n, "BV");
            return n;
        }
        let n = b.node(&format!("_{}_n_1", lemma(np.head.0)), Some(np.head));
        if let Some(d) = np.det {
            let q = b.node(&format!("_{}_q", lemma(d)), Some((d, d)));
            b.edge(q, n, "BV");
        }
        if let Some(a) = np.adj {
            let m = b.node(&format!("_{}_a_1", lemma(a)), Some((a, a)));
            b.edge(m, n, "ARG1");
        }
        n
    };
    match &s.clause {
        Clause::Transitive { subj, verb, obj, pp } => {
            let v = b.node(&format!("_{}_v_1", lemma(*verb)), Some((*verb, *verb)));
            let (sh, oh) = (np(b, subj), np(b, obj));
            b.edge(v, sh, "ARG1");
            b.edge(v, oh, "ARG2");
            if let Some((p, pnp)) = pp {
                let pn = b.node(&format!("_{}_p", lemma(*p)), Some((*p, *p)));
                let ph = np(b, pnp);
                b.edge(pn, v, "ARG1");
                b.edge(pn, ph, "ARG2");
            }
            b.g.tops = vec![v];
        }
        Clause::Control { subj, verb, inf, .. } => {
            let v = b.node(&format!("_{}_v_1", lemma(*verb)), Some((*verb, *verb)));
            let i = b.node(&format!("_{}_v_1", lemma(*inf)), Some((*inf, *inf)));
            let sh = np(b, subj);
            b.edge(v, sh, "ARG1");
            b.edge(v, i, "ARG2");
            b.edge(i, sh, "ARG1");
            b.g.tops = vec![v];
        }
    }
}

fn ucca(b: &mut Builder, s: &Sentence) {
    let leaf = |b: &mut Builder, i: usize| b.unlabeled(Some((i, i)));
    let np = |b: &mut Builder, np: &Np| -> u32 {
        if np.det.is_none() && np.head.0 == np.head.1 {
            return leaf(b, np.head.0);
        }
        let u = b.unlabeled(None);
        if let Some(d) = np.det {
            let l = leaf(b, d);
            b.edge(u, l, "E");
        }
        if let Some(a) = np.adj {
            let l = leaf(b, a);
            b.edge(u, l, "E");
        }
        for k in np.head.0..=np.head.1 {
            let l = leaf(b, k);
            b.edge(u, l, "C");
        }
        u
    };
    let root = b.unlabeled(None);
    b.g.tops = vec![root];
    match &s.clause {
        Clause::Transitive { subj, verb, obj, pp } => {
            let a = np(b, subj);
            b.edge(root, a, "A");
            let p = leaf(b, *verb);
            b.edge(root, p, "P");
            let o = np(b, obj);
            b.edge(root, o, "A");
            if let Some((r, pnp)) = pp {
                let u = b.unlabeled(None);
                let rl = leaf(b, *r);
                b.edge(u, rl, "R");
                let inner = np(b, pnp);
                b.edge(u, inner, "C");
                b.edge(root, u, "A");
            }
        }
        Clause::Control { subj, verb, to, inf } => {
            let a = np(b, subj);
            b.edge(root, a, "A");
            let p = leaf(b, *verb);
            b.edge(root, p, "D");
            let scene = b.unlabeled(None);
            b.edge(root, scene, "A");
            let f = leaf(b, *to);
            b.edge(scene, f, "F");
            let ip = leaf(b, *inf);
            b.edge(scene, ip, "P");
            b.g.edges
                .push(MrpEdge::new(scene, a, "A").with_attribute("remote", Value::Bool(true)));
            if s.words[*inf].lemma == "eat" {
                let implicit = b.unlabeled(None);
                b.edge(scene, implicit, "A");
            }
        }
    }
    let u = leaf(b, s.stop);
    b.edge(root, u, "U");
}

fn amr(b: &mut Builder, s: &Sentence) {
    let np = |b: &mut Builder, np: &Np| -> u32 {
        if np.name {
            let words: Vec<&str> = (np.head.0..=np.head.1).map(|k| s.words[k].form.as_str()).collect();
            let concept = if s.words[np.head.0].ner.ends_with("LOC") {
                "city"
            } else {
                "person"
            };
            let e = b.node(concept, None);
            let n = b.node("name", None);
            for (k, w) in words.iter().enumerate() {
                b.prop(n, &format!("op{}", k + 1), w);
            }
            b.edge(e, n, "name");
            return e;
        }
        let n = b.node(&s.words[np.head.0].lemma, None);
        if let Some(a) = np.adj {
            let m = b.node(&s.words[a].lemma, None);
            b.edge(n, m, "mod");
        }
        n
    };
    match &s.clause {
        Clause::Transitive { subj, verb, obj, pp } => {
            let v = b.node(&format!("{}-01", s.words[*verb].lemma), None);
            b.g.tops = vec![v];
            let a0 = np(b, subj);
            b.edge(v, a0, "ARG0");
            let a1 = np(b, obj);
            b.edge(v, a1, "ARG1");
            if let Some((p, pnp)) = pp {
                let x = np(b, pnp);
                let role = if s.words[*p].lemma == "near" { "location" } else { "accompanier" };
                b.edge(v, x, role);
            }
        }
        Clause::Control { subj, verb, inf, .. } => {
            let v = b.node(&format!("{}-01", s.words[*verb].lemma), None);
            b.g.tops = vec![v];
            let a0 = np(b, subj);
            let i = b.node(&format!("{}-01", s.words[*inf].lemma), None);
            b.edge(v, a0, "ARG0");
            b.edge(v, i, "ARG1");
            b.edge(i, a0, "ARG0");
        }
    }
}

/// `n` sentences with gold graphs and companion analyses, deterministic in
/// `seed`.
pub fn gen_synthetic(framework: Framework, n: usize, seed: u64) -> Vec<(MrpGraph, CompanionSentence)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let control_rate = if framework == Framework::Amr { 0.5 } else { 0.3 };
    (0..n)
        .map(|i| {
            let s = sentence(&mut rng, control_rate);
            let (text, tokens) = s.text_and_tokens();
            let id = format!("{framework}-{seed}-{i:04}");
            let mut c = CompanionSentence::new(Some(id.clone()), tokens);
            c.ner_tags = s.words.iter().map(|w| w.ner.clone()).collect();
            let mut b = Builder {
                g: MrpGraph::new(id, framework, text),
                tokens: &c.tokens,
            };
            match framework {
                Framework::Dm => bilexical(&mut b, &s, false),
                Framework::Psd => bilexical(&mut b, &s, true),
                Framework::Eds => eds(&mut b, &s),
                Framework::Ucca => ucca(&mut b, &s),
                Framework::Amr => amr(&mut b, &s),
            }
            let g = b.g;
            (g, c)
        })
        .collect()
}

/// Fraction of graphs with a node of in-degree two or more.
pub fn reentrancy_rate(corpus: &[(MrpGraph, CompanionSentence)]) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    let hits = corpus
        .iter()
        .filter(|(g, _)| g.nodes.iter().any(|n| g.in_degree(n.id) >= 2))
        .count();
    hits as f64 / corpus.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{serialize_mrp, validate_graph};

    #[test]
    fn deterministic() {
        for fw in Framework::ALL {
            let a: Vec<String> = gen_synthetic(fw, 5, 1).iter().map(|(g, _)| serialize_mrp(g)).collect();
            let b: Vec<String> = gen_synthetic(fw, 5, 1).iter().map(|(g, _)| serialize_mrp(g)).collect();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn graphs_validate() {
        for fw in Framework::ALL {
            for (g, _) in gen_synthetic(fw, 30, 2) {
                let v = validate_graph(&g);
                assert!(v.is_empty(), "{fw} {}: {v:?}", g.id);
            }
        }
    }

    #[test]
    fn amr_reentrancy() {
        assert!(reentrancy_rate(&gen_synthetic(Framework::Amr, 200, 3)) >= 0.2);
    }

    #[test]
    fn dm_one_token_per_node() {
        for (g, c) in gen_synthetic(Framework::Dm, 20, 4) {
            assert_eq!(g.nodes.len(), c.len());
            for n in &g.nodes {
                assert_eq!(n.anchors.as_ref().map(Vec::len), Some(1));
            }
        }
    }
}
