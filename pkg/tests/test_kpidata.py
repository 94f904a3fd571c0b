import numpy as np
import pandas as pd
import pytest

from pqlat.exceptions import ParameterError, RecordValidationError, SchemaError
from pqlat.kpidata import (
    BIN_SECONDS,
    DAY_SECONDS,
    FEATURE_COLUMNS,
    KPI_COLUMNS,
    LABEL_COLUMN,
    CORRELATION_REFERENCE,
    CellGraph,
    KNearest,
    Radius,
    anomaly_labels,
    build_graph,
    correlation_table,
    day_index,
    default_profile,
    event_windows,
    frame_from_records,
    generate_dataset,
    load_csv,
    pearson,
    records_from_frame,
    save_csv,
    sign_check,
    split_by_days,
    validate_frame,
)


class TestGeneration:
    def test_shape_and_header(self, dense_urban):
        assert list(dense_urban.columns) == KPI_COLUMNS
        assert len(dense_urban) == 30 * 96 * 20

    def test_grid_and_ranges(self, dense_urban):
        assert np.all(dense_urban["timestamp"] % BIN_SECONDS == 0)
        validate_frame(dense_urban.iloc[::97])

    def test_deterministic(self, graph):
        a = generate_dataset(default_profile("vehicular", seed=4), 2, graph)
        b = generate_dataset(default_profile("vehicular", seed=4), 2, graph)
        pd.testing.assert_frame_equal(a, b)

    def test_seed_changes_data(self, graph):
        a = generate_dataset(default_profile(seed=1), 1, graph)
        b = generate_dataset(default_profile(seed=2), 1, graph)
        assert not a[LABEL_COLUMN].equals(b[LABEL_COLUMN])

    def test_prb_dominates(self, dense_urban):
        assert pearson(dense_urban, "prb_util_dl") > 0.6
        assert pearson(dense_urban, "avg_cqi") < 0

    def test_neighbours_correlate_more_than_distant_cells(self, dense_urban, graph):
        piv = dense_urban.pivot(index="timestamp", columns="cell_id", values=LABEL_COLUMN)[graph.cell_ids]
        corr = np.corrcoef(piv.to_numpy().T)
        hops = graph.hop_distances()
        near = corr[hops == 1].mean()
        far = corr[(hops >= 3) & np.isfinite(hops)].mean()
        assert near > far

    @pytest.mark.parametrize("kind", ["dense_urban", "vehicular", "event"])
    def test_daily_autocorrelation(self, graph, kind):
        df = generate_dataset(default_profile(kind, seed=2), 20, graph)
        series = df.pivot(index="timestamp", columns="cell_id", values=LABEL_COLUMN).to_numpy()

        def acf(lag):
            a, b = series[:-lag], series[lag:]
            return np.mean([np.corrcoef(a[:, j], b[:, j])[0, 1] for j in range(series.shape[1])])
        assert acf(96) > acf(48)

    def test_event_windows_raise_latency(self, graph):
        prof = default_profile("event", seed=0)
        df = generate_dataset(prof, 20, graph)
        flag = anomaly_labels(df, prof)["is_anomaly"].to_numpy().astype(bool)
        tod = df["timestamp"].to_numpy() % DAY_SECONDS
        same_clock = ~flag & (tod >= 19 * 3600) & (tod < 23.5 * 3600)
        assert flag.sum() == 2 * 18 * 20
        assert df[LABEL_COLUMN][flag].mean() > df[LABEL_COLUMN][same_clock].mean()

    def test_window_outside_span(self, graph):
        prof = default_profile("dense_urban", anomaly_windows=event_windows(days=(5,)))
        with pytest.raises(ParameterError):
            generate_dataset(prof, 3, graph)

    def test_truth_frame(self, graph):
        df, truth = generate_dataset(default_profile(), 1, graph, return_truth=True)
        assert len(truth) == len(df)
        assert truth["rho"].between(0, 1).all()

    def test_des_backend(self):
        small = build_graph([("a", 0, 0), ("b", 1, 0)], Radius(1.5))
        df = generate_dataset(default_profile(seed=0), 1, small, label_backend="des")
        assert (df[LABEL_COLUMN] > 0).all()
        assert np.allclose(df[LABEL_COLUMN] * 10, np.round(df[LABEL_COLUMN] * 10))

    def test_bad_profile(self):
        with pytest.raises(ParameterError):
            default_profile(peak_load=1.2)
        with pytest.raises(ParameterError):
            default_profile(qci=5)
        with pytest.raises(ParameterError):
            default_profile(mobility=1.5)


class TestCorrelation:
    def test_identity_and_negation(self, small_dataset):
        df = small_dataset.assign(copy=small_dataset[LABEL_COLUMN], neg=-small_dataset[LABEL_COLUMN])
        assert pearson(df, "copy") == pytest.approx(1.0)
        assert pearson(df, "neg") == pytest.approx(-1.0)

    def test_independent_noise(self):
        rng = np.random.default_rng(0)
        df = pd.DataFrame({"x": rng.normal(size=10_000), LABEL_COLUMN: rng.normal(size=10_000)})
        assert abs(pearson(df, "x")) < 0.05

    def test_zero_variance(self, small_dataset):
        with pytest.raises(ParameterError):
            pearson(small_dataset.assign(c=1.0), "c")

    def test_missing_column(self, small_dataset):
        with pytest.raises(SchemaError):
            correlation_table(small_dataset.drop(columns=["avg_cqi"]))

    def test_table(self, dense_urban):
        rows = correlation_table(dense_urban)
        assert [r.column for r in rows] == [t[1] for t in CORRELATION_REFERENCE]
        assert all(-1 <= r.r <= 1 for r in rows)
        assert sign_check(rows)
        ref = {r.column: r.reference for r in rows}
        assert ref["prb_util_dl"] == 0.79
        assert correlation_table(dense_urban) == rows

    def test_shuffled_labels_fail(self, dense_urban):
        rng = np.random.default_rng(0)
        shuffled = dense_urban.assign(**{LABEL_COLUMN: rng.permutation(dense_urban[LABEL_COLUMN].to_numpy())})
        assert not sign_check(correlation_table(shuffled))


class TestGraph:
    def test_path(self):
        g = build_graph([("a", 0, 0), ("b", 1, 0), ("c", 2, 0)], Radius(1.5))
        assert g.edges == {("a", "b"), ("b", "c")}

    def test_knearest(self):
        g = build_graph([("a", 0, 0), ("b", 1, 0)], KNearest(1))
        assert len(g.edges) == 1

    def test_radius_zero(self):
        assert build_graph([("a", 0, 0), ("b", 1, 0)], Radius(0)).edges == set()

    def test_k_too_large(self):
        with pytest.raises(ParameterError):
            build_graph([("a", 0, 0), ("b", 1, 0)], KNearest(2))

    def test_invariants(self, graph):
        adj = graph.adjacency()
        assert np.array_equal(adj, adj.T) and np.all(np.diag(adj) == 0)

    def test_self_loop_rejected(self):
        with pytest.raises(ParameterError):
            CellGraph([("a", 0, 0)], {("a", "a")})

    def test_roundtrip(self, graph, tmp_path):
        graph.save(tmp_path / "n.csv", tmp_path / "e.csv")
        back = CellGraph.load(tmp_path / "n.csv", tmp_path / "e.csv")
        assert back.edges == graph.edges and back.cells == graph.cells


class TestSplit:
    def test_boundary(self, dense_urban):
        train, test = split_by_days(dense_urban, 20, 10)
        t0 = dense_urban["timestamp"].min()
        assert train["timestamp"].max() < t0 + 20 * DAY_SECONDS <= test["timestamp"].min()
        assert len(train) + len(test) == len(dense_urban)

    def test_empty_test(self, small_dataset):
        train, test = split_by_days(small_dataset, 3, 0)
        assert len(test) == 0 and len(train) == len(small_dataset)

    def test_order_invariant(self, small_dataset):
        shuffled = small_dataset.sample(frac=1.0, random_state=0)
        a = split_by_days(small_dataset, 2, 1)
        b = split_by_days(shuffled, 2, 1)
        pd.testing.assert_frame_equal(a[0], b[0])
        pd.testing.assert_frame_equal(a[1], b[1])

    def test_insufficient_span(self, small_dataset):
        with pytest.raises(ParameterError):
            split_by_days(small_dataset, 3, 1)

    def test_day_index(self, small_dataset):
        assert set(day_index(small_dataset)) == {0, 1, 2}


class TestCsv:
    def test_roundtrip(self, dense_urban, tmp_path):
        part = dense_urban.iloc[:10_000].reset_index(drop=True)
        save_csv(part, tmp_path / "k.csv")
        back = load_csv(tmp_path / "k.csv")
        pd.testing.assert_frame_equal(back, part, check_exact=True)

    def test_header_only(self, tmp_path):
        (tmp_path / "h.csv").write_text(",".join(KPI_COLUMNS) + "\n")
        df = load_csv(tmp_path / "h.csv")
        assert len(df) == 0 and list(df.columns) == KPI_COLUMNS

    def test_out_of_range(self, small_dataset, tmp_path):
        bad = small_dataset.iloc[:5].copy()
        bad.loc[3, "prb_util_dl"] = 1.2
        save_csv(bad, tmp_path / "b.csv")
        with pytest.raises(RecordValidationError) as exc:
            load_csv(tmp_path / "b.csv")
        assert exc.value.row == 3 and exc.value.field == "prb_util_dl"
        assert "row 3" in str(exc.value) and "prb_util_dl" in str(exc.value)

    def test_unparsable(self, small_dataset, tmp_path):
        save_csv(small_dataset.iloc[:3], tmp_path / "u.csv")
        lines = (tmp_path / "u.csv").read_text().splitlines()
        fields = lines[2].split(",")
        fields[6] = "abc"
        lines[2] = ",".join(fields)
        (tmp_path / "u.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(RecordValidationError) as exc:
            load_csv(tmp_path / "u.csv")
        assert exc.value.row == 1 and exc.value.field == "avg_cqi"

    def test_bad_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b\n")
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "x.csv")

    def test_records_roundtrip(self, small_dataset):
        recs = records_from_frame(small_dataset.iloc[:20])
        pd.testing.assert_frame_equal(frame_from_records(recs), small_dataset.iloc[:20].reset_index(drop=True))
        assert len(FEATURE_COLUMNS) == 10
