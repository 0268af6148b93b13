import json

import numpy as np
import pytest

from occupancy import Geometric, load_model, model_from_spec
from occupancy.models import ModelError
from occupancy.specfile import dump_json


class TestRoundTrip:
    def test_catalog(self, models):
        for name, m in models.items():
            again = model_from_spec(json.loads(dump_json(m)))
            js = np.arange(1, 10_001)
            if m.support_size is not None:
                js = js[: m.support_size]
            np.testing.assert_array_equal(again.log_freqs(js), m.log_freqs(js), err_msg=name)
            assert again.to_spec() == m.to_spec()

    def test_nested(self):
        spec = {
            "kind": "merged",
            "parts": [{"kind": "explicit", "values": [0.5, 0.3], "tail": {"kind": "geometric", "q": 0.25}}, {"kind": "power_law", "alpha": 3}],
            "normalized": True,
        }
        m = model_from_spec(spec)
        assert model_from_spec(m.to_spec()).to_spec() == m.to_spec()


class TestParsing:
    def test_inline_json(self):
        m = load_model('{"kind": "poisson_weights", "lambda": 1.5}')
        assert m.lam == 1.5

    def test_inline_toml(self):
        m = load_model('kind = "geometric"\nq = 0.25\nnormalized = true')
        assert isinstance(m, Geometric) and m.normalized

    def test_toml_file(self, tmp_path):
        path = tmp_path / "m.toml"
        path.write_text('kind = "negative_binomial"\nlambda = 2.0\nq = 0.5\n')
        assert load_model(str(path)).params() == {"lambda": 2.0, "q": 0.5}

    def test_json_file(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text('{"kind": "doubling_blocks", "levels": 5}')
        assert load_model(str(path)).levels == 5

    def test_missing_file(self):
        with pytest.raises(OSError):
            load_model("/nonexistent/model.json")

    @pytest.mark.parametrize(
        "spec, field",
        [
            ({"kind": "geometric"}, "q"),
            ({"kind": "geometric", "q": "x"}, "q"),
            ({"kind": "geometric", "q": 0.5, "bogus": 1}, "bogus"),
            ({"kind": "zipf"}, "kind"),
            ({"q": 0.5}, "kind"),
            ({"kind": "power_law", "alpha": 0.5}, "alpha"),
            ({"kind": "merged", "parts": []}, "parts"),
        ],
    )
    def test_errors_name_field(self, spec, field):
        with pytest.raises(ModelError, match=field):
            model_from_spec(spec)

    def test_garbage(self):
        with pytest.raises(ModelError):
            load_model("{not json")
