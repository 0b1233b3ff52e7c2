import pathlib
import re

import pytest

import ddrnet

DOC = pathlib.Path(__file__).resolve().parents[2] / "docs" / "param_names.md"


def patterns():
    text = DOC.read_text()
    block = text.split("```patterns\n", 1)[1].split("```", 1)[0]
    return [re.compile(line) for line in block.splitlines() if line.strip()]


@pytest.mark.parametrize("variant", ddrnet.list_variants())
@pytest.mark.parametrize("task,aux", [("seg", True), ("cls", False)])
def test_every_slot_documented(tmp_path, variant, task, aux):
    pats = patterns()
    path = str(tmp_path / "w.ddrw")
    ddrnet.Model(variant, task, aux=aux).save(path)
    names = list(ddrnet.read_checkpoint(path))
    undocumented = [n for n in names if not any(p.fullmatch(n) for p in pats)]
    assert undocumented == []
    assert len(set(names)) == len(names)
