"""Smoke test for the mrparse_py extension.

Build and install first:  pip install --no-build-isolation crates/py
"""

import json
import math
import tempfile

import mrparse_py as mp


def check_graphs():
    pairs = mp.synthesize("eds", 5, seed=2)
    graphs = [g for g, _ in pairs]
    doc = "\n".join(g.to_json() for g in graphs)
    back = mp.read_mrp(doc)
    assert [g.to_json() for g in back] == [g.to_json() for g in graphs]
    assert all(not g.validate() for g in graphs)
    seq = graphs[0].linearize()
    assert seq[0][1] == 0 and seq[0][2] is None
    report = mp.evaluate(graphs, back)
    assert report.micro_f1 == 1.0 and report.f1("labels") == 1.0
    print("graphs ok:", graphs[0])


def check_inference():
    s = mp.PartScores(3)
    for i in range(3):
        for j in range(3):
            s.set_edge(i, j, -math.inf)
    s.set_edge(0, 1, 0.0)
    s.set_edge(0, 2, 0.0)
    s.set_sib(0, 1, 2, math.log(2))
    exact = s.exact()
    assert abs(exact[0][1] - 0.6) < 1e-12
    assert abs(s.mean_field(5)[0][1] - 0.6) <= 0.02
    summary = json.loads(mp.oracle_check(seed=0, instances=50))
    assert summary["factorized_max_error"] <= 1e-9
    print("inference ok:", summary)


def check_training():
    config = "\n".join([
        "framework = dm",
        "model.encoder.hidden = 8",
        "data.synthetic = 10",
        "max_steps = 10",
        "eval_every = 5",
    ])
    model, report = mp.train(config)
    report = json.loads(report)
    assert report["steps"] == 10
    graph, conllu = mp.synthesize("dm", 1, seed=99)[0]
    pred = model.parse(graph.id, graph.input, conllu)
    assert pred.framework == "dm" and not pred.validate()
    with tempfile.TemporaryDirectory() as d:
        model.save(d)
        again = mp.Model.load(d)
        assert again.parse(graph.id, graph.input, conllu).to_json() == pred.to_json()
    print("training ok:", model.num_parameters, "parameters,", pred)


if __name__ == "__main__":
    check_graphs()
    check_inference()
    check_training()
    print("smoke test passed")
