"""CSV ingestion, validation diagnostics, and lossless export."""

import numpy as np
import pytest

from recoveru.errors import DegenerateDataError, ReportError, ValidationError
from recoveru.ingest import export_csv, ingest_csv
from recoveru.spatial import SpatialDataset


COLUMNS = dict(x="x", y="y", treatment="treat", outcome="out",
               covariates=("c1", "c2"))


def write_csv(path, rows, header="x,y,treat,out,c1,c2"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def valid_rows():
    return [
        "0.0,0.0,1,2.5,0.1,1.0",
        "1.0,0.5,0,1.25,-0.2,2.0",
        "2.0,1.5,1,3.0,0.3,3.0",
    ]


def random_dataset(n=25, p=3, seed=0):
    rng = np.random.default_rng(seed)
    return SpatialDataset(
        coords=rng.uniform(0.0, 10.0, size=(n, 2)),
        y=rng.standard_normal(n),
        a=rng.binomial(1, 0.4, n),
        z=rng.standard_normal((n, p)),
        covariate_names=tuple(f"z{j}" for j in range(p)),
    )


class TestIngestCsv:
    def test_reads_a_well_formed_file(self, tmp_path):
        path = write_csv(tmp_path / "ok.csv", valid_rows())
        data = ingest_csv(path, **COLUMNS)
        assert data.n == 3
        np.testing.assert_array_equal(data.a, [1, 0, 1])
        np.testing.assert_array_equal(data.y, [2.5, 1.25, 3.0])
        np.testing.assert_array_equal(data.coords[:, 1], [0.0, 0.5, 1.5])
        np.testing.assert_array_equal(data.z[:, 0], [0.1, -0.2, 0.3])
        assert data.covariate_names == ("c1", "c2")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ValidationError, match="not found"):
            ingest_csv(tmp_path / "absent.csv", **COLUMNS)

    def test_missing_columns_are_named(self, tmp_path):
        path = write_csv(tmp_path / "cols.csv", ["0,0,1,2,0.1"],
                         header="x,y,treat,out,c1")
        with pytest.raises(ValidationError, match="c2"):
            ingest_csv(path, **COLUMNS)

    def test_requires_a_covariate(self, tmp_path):
        path = write_csv(tmp_path / "ok.csv", valid_rows())
        with pytest.raises(ValidationError, match="covariate"):
            ingest_csv(path, x="x", y="y", treatment="treat",
                       outcome="out", covariates=())

    def test_rejects_repeated_column_mapping(self, tmp_path):
        path = write_csv(tmp_path / "ok.csv", valid_rows())
        with pytest.raises(ValidationError, match="repeats"):
            ingest_csv(path, x="x", y="y", treatment="treat",
                       outcome="out", covariates=("out",))

    def test_header_without_rows(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("x,y,treat,out,c1,c2\n", encoding="utf-8")
        with pytest.raises(DegenerateDataError, match="no data rows"):
            ingest_csv(path, **COLUMNS)

    def test_unparseable_cell_is_located(self, tmp_path):
        rows = valid_rows()
        rows[1] = "1.0,0.5,0,oops,-0.2,2.0"
        path = write_csv(tmp_path / "bad.csv", rows)
        with pytest.raises(ValidationError, match=r"row 2.*'oops'.*'out'"):
            ingest_csv(path, **COLUMNS)

    def test_missing_value_is_located(self, tmp_path):
        rows = valid_rows()
        rows[2] = "2.0,1.5,1,3.0,,3.0"
        path = write_csv(tmp_path / "gap.csv", rows)
        with pytest.raises(ValidationError, match=r"row 3: missing value.*'c1'"):
            ingest_csv(path, **COLUMNS)

    def test_nonbinary_treatment_is_rejected(self, tmp_path):
        rows = valid_rows()
        rows[0] = "0.0,0.0,2,2.5,0.1,1.0"
        path = write_csv(tmp_path / "treat.csv", rows)
        with pytest.raises(ValidationError, match="must be 0 or 1"):
            ingest_csv(path, **COLUMNS)

    def test_many_problems_are_truncated(self, tmp_path):
        rows = ["nope,0,1,2,0.1,1.0"] * 8
        path = write_csv(tmp_path / "many.csv", rows)
        with pytest.raises(ValidationError, match=r"and 3 more"):
            ingest_csv(path, **COLUMNS)

    def test_duplicate_coordinates_warn_but_load(self, tmp_path, caplog):
        rows = valid_rows() + ["0.0,0.0,0,1.0,0.4,4.0"]
        path = write_csv(tmp_path / "dups.csv", rows)
        with caplog.at_level("WARNING", logger="recoveru.ingest"):
            data = ingest_csv(path, **COLUMNS)
        assert data.n == 4
        np.testing.assert_array_equal(data.coords[3], data.coords[0])
        assert any("share coordinates" in rec.message for rec in caplog.records)

    def test_jitter_moves_only_the_repeats(self, tmp_path):
        rows = valid_rows() + ["0.0,0.0,0,1.0,0.4,4.0"]
        path = write_csv(tmp_path / "dups.csv", rows)
        data = ingest_csv(path, jitter_duplicates=0.01, seed=5, **COLUMNS)
        again = ingest_csv(path, jitter_duplicates=0.01, seed=5, **COLUMNS)
        np.testing.assert_array_equal(data.coords[:3],
                                      [[0, 0], [1, 0.5], [2, 1.5]])
        moved = data.coords[3] - np.array([0.0, 0.0])
        assert np.all(np.abs(moved) <= 0.01)
        assert np.any(moved != 0.0)
        np.testing.assert_array_equal(data.coords, again.coords)


class TestExportCsv:
    def test_round_trip_is_bit_exact(self, tmp_path):
        data = random_dataset()
        path = tmp_path / "export.csv"
        export_csv(data, path, x="x", y="y", treatment="treat", outcome="out")
        back = ingest_csv(path, x="x", y="y", treatment="treat",
                          outcome="out", covariates=data.covariate_names)
        np.testing.assert_array_equal(back.coords, data.coords)
        np.testing.assert_array_equal(back.y, data.y)
        np.testing.assert_array_equal(back.a, data.a)
        np.testing.assert_array_equal(back.z, data.z)
        assert back.covariate_names == data.covariate_names

    def test_extra_columns_are_written(self, tmp_path):
        data = random_dataset(n=6)
        path = tmp_path / "extra.csv"
        u = np.linspace(-1.0, 1.0, 6)
        export_csv(data, path, extra={"u_hat": u})
        header = path.read_text(encoding="utf-8").splitlines()[0]
        assert header.split(",")[-1] == "u_hat"
        back = ingest_csv(path, x="x", y="y", treatment="treatment",
                          outcome="outcome",
                          covariates=(*data.covariate_names, "u_hat"))
        np.testing.assert_array_equal(back.z[:, -1], u)

    def test_extra_column_length_is_checked(self, tmp_path):
        data = random_dataset(n=6)
        with pytest.raises(ValidationError, match="u_hat"):
            export_csv(data, tmp_path / "bad.csv", extra={"u_hat": np.ones(5)})

    def test_unwritable_path(self, tmp_path):
        data = random_dataset(n=4)
        with pytest.raises(ReportError, match="cannot write"):
            export_csv(data, tmp_path)
