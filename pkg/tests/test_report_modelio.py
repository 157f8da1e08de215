"""Report CSV/SVG output and the binary model format."""

import struct

import numpy as np
import pytest

from drosent.errors import DataFormatError
from drosent.modelio import MAGIC, load_model, save_model
from drosent.netcore import BILSTM2, init_params, model_forward
from drosent.pipeline import SweepReport, SweepRow
from drosent.projections import ProjectionSpec
from drosent.report import format_report_csv, read_report_csv, render_svg, write_report_csv


def sample_report(std=False):
    rows = [SweepRow("l2", 1.0, 0.81234, 0.7), SweepRow("l2", 2.5, 0.8, 0.72),
            SweepRow("l4", 1.0, float("nan"), float("nan"), error="did not converge")]
    if std:
        for r in rows[:2]:
            r.in_dist_std, r.ood_std = 0.01, 0.02
        rows[2].in_dist_std = rows[2].ood_std = float("nan")
    return SweepReport(rows, {"seed": 0, "mode": "dro-repr"})


class TestReportCsv:
    def test_layout(self):
        text = format_report_csv(sample_report(), timestamp=False)
        assert text.splitlines() == [
            "# drosent sweep report",
            "# mode=dro-repr",
            "# seed=0",
            "# error l4 R=1: did not converge",
            "set_kind,radius,in_dist_acc,ood_acc",
            "l2,1,0.8123,0.7000",
            "l2,2.5,0.8000,0.7200",
            "l4,1,nan,nan",
        ]

    def test_timestamp_only_in_metadata(self):
        with_ts = format_report_csv(sample_report()).splitlines()
        without = format_report_csv(sample_report(), timestamp=False).splitlines()
        extra = [line for line in with_ts if line not in without]
        assert len(extra) == 1 and extra[0].startswith("# timestamp=")

    @pytest.mark.parametrize("std", [False, True])
    def test_round_trip(self, tmp_path, std):
        write_report_csv(sample_report(std), tmp_path / "r.csv")
        back = read_report_csv(tmp_path / "r.csv")
        assert [(r.set_kind, r.radius) for r in back.rows] == [("l2", 1.0), ("l2", 2.5), ("l4", 1.0)]
        assert back.rows[0].in_dist_acc == 0.8123
        assert back.rows[2].error == "did not converge"
        assert back.metadata["seed"] == "0"
        assert (back.rows[0].ood_std == 0.02) == std

    def test_malformed(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("radius,acc\n")
        with pytest.raises(DataFormatError, match="missing header"):
            read_report_csv(path)
        path.write_text("set_kind,radius,in_dist_acc,ood_acc\nl2,1,0.5\n")
        with pytest.raises(DataFormatError, match=r"r\.csv:2"):
            read_report_csv(path)
        path.write_text("set_kind,radius,in_dist_acc,ood_acc\nl2,one,0.5,0.5\n")
        with pytest.raises(DataFormatError, match=r"r\.csv:2"):
            read_report_csv(path)


class TestSvg:
    def test_one_polyline_per_kind(self):
        rows = [SweepRow(k, r, 0.8, 0.6 + 0.01 * r) for k in ("simplex", "l1", "l2") for r in (1, 5, 10)]
        svg = render_svg(SweepReport(rows))
        assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
        assert svg.count("<polyline") == 3
        for kind in ("simplex", "l1", "l2"):
            assert f">{kind}</text>" in svg

    def test_failed_rows_left_out(self):
        assert render_svg(sample_report()).count("<polyline") == 1


class TestModelFile:
    @pytest.mark.parametrize("spec", [None, ProjectionSpec.lp_ball(4, 2.0), ProjectionSpec.simplex(5.0)])
    def test_round_trip(self, tmp_path, spec):
        params = init_params(BILSTM2, 3, 2, 0.2, spec, seed=5)
        save_model(params, tmp_path / "m.bin", features={"kind": "hashed", "dim": 3})
        loaded, features = load_model(tmp_path / "m.bin")
        assert features == {"kind": "hashed", "dim": 3}
        assert (loaded.encoder, loaded.input_dim, loaded.hidden_dim, loaded.dropout_rate, loaded.seed) == \
            (BILSTM2, 3, 2, 0.2, 5)
        assert loaded.projection == spec
        for k, w in params.weights.items():
            np.testing.assert_array_equal(loaded.weights[k], w.astype(np.float32))
        save_model(loaded, tmp_path / "again.bin", features=features)
        assert (tmp_path / "again.bin").read_bytes() == (tmp_path / "m.bin").read_bytes()
        x = np.ones((2, 3))
        assert model_forward(x, loaded)[0] == pytest.approx(model_forward(x, params)[0], abs=1e-6)

    def test_header(self, tmp_path):
        save_model(init_params("meanpool", 2), tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        assert blob.startswith(MAGIC)
        version, size = struct.unpack_from("<BI", blob, len(MAGIC))
        assert version == 1 and b'"encoder": "meanpool"' in blob[len(MAGIC) + 5:len(MAGIC) + 5 + size]

    def test_corrupt_files(self, tmp_path):
        path = tmp_path / "m.bin"
        save_model(init_params("meanpool", 2), path)
        good = path.read_bytes()
        cases = {
            b"XXXXXXXX" + good[8:]: "bad magic",
            good[:-2]: "truncated|trailing",
            good + b"\0": "trailing",
            good[:8] + b"\x09" + good[9:]: "version",
            good[:30]: "malformed|truncated",
        }
        for blob, match in cases.items():
            path.write_bytes(blob)
            with pytest.raises(DataFormatError, match=match):
                load_model(path)
        with pytest.raises(DataFormatError, match="nope"):
            load_model(tmp_path / "nope.bin")
