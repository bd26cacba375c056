"""Smoke test for the `hcs` extension module. Run after `maturin develop`."""

import math
import tempfile
from pathlib import Path

import hcs


def main():
    assert hcs.ks_two_sample([1.0, 2.0, 3.0], [1.5, 2.5, 3.5]) == 1 / 3
    assert abs(hcs.cvm_two_sample([1.0, 3.0], [2.0, 4.0]) - 0.125) < 1e-12
    assert abs(hcs.cauchy_combine([0.3, 0.3]) - 0.3) < 1e-12

    table, truth = hcs.generate_screen({"seed": 1, "batch_shift_sigma": 1.0})
    assert len(table) == 4 * (200 * 2 * 2 + 100) and table.dim == 64
    assert len(truth["related_pairs"]) == 100

    with tempfile.TemporaryDirectory() as d:
        for name in ("screen.arrow", "screen.csv"):
            path = str(Path(d) / name)
            table.save(path)
            back = hcs.EmbeddingTable.load(path)
            assert back.row(7) == table.row(7)

    whitened = hcs.fit_tvn(table).apply(table)
    recall = hcs.relationship_recall(whitened, [tuple(p) for p in truth["related_pairs"]])
    print(f"planted recall after TVN: {recall['recall']:.3f}")
    assert recall["recall"] >= 0.9

    cons = hcs.perturbation_consistency(whitened, k=200, seed=3, group_by="gene")
    planted = [r for r in cons["results"] if r["perturbation_id"] not in truth["null_genes"]]
    hits = sum(r["combined_p"] < 0.01 for r in planted)
    print(f"consistent planted genes: {hits}/{len(planted)}")
    assert hits >= 0.8 * len(planted)

    rep = hcs.replicate_consistency(whitened, [("EXP00", "EXP01")], seed=3)
    assert 0.0 <= rep["median_ks"] <= 1.0 and not math.isnan(rep["median_cvm"])

    blocks = hcs.generate_block_family(
        12, 7,
        {"n_genes": 10, "wells_per_guide_per_experiment": 4, "dim": 16, "frac_null_genes": 0.0,
         "noise_sigma": 0.5, "n_related_groups": 0, "n_neg_controls_per_experiment": 0, "seed": 2},
    )
    sweep = hcs.sweep_blocks(blocks, ["EXP03"])
    print(f"best block {sweep['best_block']} at {sweep['best_accuracy']:.3f}")
    assert sweep["best_block"] == 7

    manifest, planted_info = hcs.generate_manifest(2000, 4, 5)
    config = {
        "required_quality_flags": planted_info["flag_names"],
        "accepted_image_shape_tags": [planted_info["accepted_shape"]],
        "seed": 5,
    }
    kept, report = hcs.curate_manifest(manifest, planted_info["consistency"], config)
    steps = report["steps"]
    assert steps[0]["rows_in"] == len(manifest) and steps[-1]["rows_out"] == len(kept)
    assert set(planted_info["expected_kept_perturbed"]) <= set(kept.well_ids())
    print(f"curation kept {len(kept)} of {len(manifest)} wells")

    try:
        hcs.EmbeddingTable.load("/nonexistent/x.arrow")
    except OSError:
        pass
    else:
        raise AssertionError("missing file should raise OSError")

    print("smoke test passed")


if __name__ == "__main__":
    main()
