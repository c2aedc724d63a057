import numpy as np

from emofuse import cli, gradcheck
from emofuse import tensor as T
from emofuse.tensor import Tensor

MODULES = ("qformer", "temporal_modeling", "fusion_expert", "gating", "adapter", "lora_lm_loss")


def test_registry_covers_modules_and_kernels():
    assert set(MODULES) <= set(gradcheck.REGISTRY)
    assert {"linear", "layer_norm", "gelu", "softmax_masked", "cross_entropy", "attention"} <= set(gradcheck.REGISTRY)


def test_all_entries_pass():
    results = gradcheck.run_all()
    bad = [(r.name, r.max_rel_error) for r in results if not r.passed]
    assert not bad
    table = gradcheck.format_table(results).splitlines()
    assert len(table) == len(gradcheck.REGISTRY) + 1


def _broken_square(x: Tensor) -> Tensor:
    return T._make(x.data * x.data, (x,), lambda g: (g * x.data,), "broken_square")


def test_wrong_backward_is_caught(monkeypatch, capsys):
    def build(rng):
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        return (lambda: T.tsum(_broken_square(x))), [x]
    res = gradcheck.check("broken", build)
    assert not res.passed and res.max_rel_error > 0.1
    monkeypatch.setattr(gradcheck, "REGISTRY", {"broken": build})
    assert cli.main(["gradcheck"]) == cli.EXIT_VERIFY
    assert "FAIL" in capsys.readouterr().out


def test_check_is_deterministic():
    a = gradcheck.check("adapter", gradcheck.REGISTRY["adapter"])
    b = gradcheck.check("adapter", gradcheck.REGISTRY["adapter"])
    assert a.max_rel_error == b.max_rel_error and np.isfinite(a.max_rel_error)
