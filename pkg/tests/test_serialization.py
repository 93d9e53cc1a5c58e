import io
from pathlib import Path
from shutil import rmtree

import numpy as np
import pytest

from heatnet._src.serialization import (
    dumps_json,
    pickle_load,
    pickle_save,
    read_json,
    write_json,
    write_jsonl,
)
from heatnet.datasets import SuperstructureBuilder, gen_circular
from heatnet.models import OptResult
from heatnet.network import (
    ConsumerSpec,
    ProducerSpec,
    design_from_dict,
    load_case,
    network_to_dict,
    save_case,
)
from heatnet.simulator import evaluate_design


def make_line_network():
    builder = SuperstructureBuilder()
    producer = builder.add_producer((0.0, 0.0), ProducerSpec(Theta=60.0))
    consumer = builder.add_consumer((100.0, 0.0), ConsumerSpec(15e3))
    builder.add_pipe(producer, consumer)
    return builder.build()


def make_result(network):
    design = network.design_from_pairs([0.1])
    evaluation = evaluate_design(network, design)
    cost = evaluation.cost
    return OptResult(
        design,
        cost,
        True,
        2,
        history=[(10, cost.total_npv * 1.1), (20, cost.total_npv)],
        method="pnlp",
        state=evaluation.sim.state,
        info={"stages": [{"k": 50.0}], "evaluations": np.int64(20)},
        wall_time=0.5,
    )


def _make_tmp_path(name: str, suffix: str = "bin"):
    return Path(__file__).parent / f"tmp/{name}.{suffix}"


def _cleanup():
    rmtree(Path(__file__).parent / "tmp")


def test_pickle_to_file_like_objects():
    result = make_result(make_line_network())
    buffer = io.BytesIO()
    pickle_save(result, buffer)
    buffer.seek(0)
    restored = pickle_load(OptResult, buffer)
    assert restored.total_npv == result.total_npv
    assert restored.history == result.history
    buffer.seek(0)
    with pytest.raises(AssertionError):
        pickle_load(dict, buffer)


def test_result_save_load():
    result = make_result(make_line_network())
    tmp_path = _make_tmp_path("result")
    result.save(tmp_path)
    restored = OptResult.load(tmp_path)
    assert np.allclose(restored.design.d, result.design.d)
    assert np.allclose(restored.state.q, result.state.q)
    assert restored.info["stages"] == result.info["stages"]
    _cleanup()


def test_result_document():
    network = make_line_network()
    result = make_result(network)
    doc = result.to_dict(network)
    assert doc["schema"] == "heatnet-result/1"
    assert doc["method"] == "pnlp"
    assert doc["cost"]["total_npv"] == pytest.approx(result.total_npv)
    assert doc["history"][-1] == [20, pytest.approx(result.total_npv)]

    tmp_path = _make_tmp_path("result", "json")
    result.write_json(network, tmp_path)
    written = read_json(tmp_path)
    # numpy scalars are written as plain numbers
    assert written["info"]["evaluations"] == 20
    design = design_from_dict(network, written["design"])
    assert np.allclose(design.d, result.design.d)
    _cleanup()


def test_case_files():
    doc = gen_circular(segments=1)
    tmp_path = _make_tmp_path("case", "json")
    save_case(doc, tmp_path)
    network = load_case(tmp_path)
    assert network.n_candidate_pipes == 18
    assert network_to_dict(network) == doc
    # Re-exports are byte-identical
    first = tmp_path.read_bytes()
    save_case(network, tmp_path)
    assert tmp_path.read_bytes() == first
    _cleanup()


def test_json_helpers():
    obj = {"a": np.arange(3), "b": np.float64(0.5), "c": [np.int32(1)]}
    text = dumps_json(obj)
    assert text.endswith("\n")
    buffer = io.StringIO()
    write_json(obj, buffer)
    assert buffer.getvalue() == text
    buffer.seek(0)
    assert read_json(buffer) == {"a": [0, 1, 2], "b": 0.5, "c": [1]}
    with pytest.raises(TypeError):
        dumps_json({"x": object()})

    tmp_path = _make_tmp_path("rows", "jsonl")
    write_jsonl([{"n": np.int64(i)} for i in range(3)], tmp_path)
    assert tmp_path.read_text().splitlines() == ['{"n": 0}', '{"n": 1}', '{"n": 2}']
    _cleanup()
