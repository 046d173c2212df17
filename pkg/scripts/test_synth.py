"""
Test script for the synthetic crowd generator, map decoding and the NMS bench.
"""

import numpy as np
import pytest

from app.back.services.attributes import dist
from app.back.services.bench_service import BENCH_COLUMNS, bench_to_csv, run_bench, summarize
from app.back.services.decode_service import decode_detections
from app.back.services.geometry import BBox, iou
from app.back.services.loss_service import PredictedMaps
from app.back.services.nms_service import attribute_nms, greedy_nms
from app.back.services.synth_service import (
    SynthConfig,
    generate_dataset,
    generate_detections,
    generate_scene,
    pair_displacement,
    place_pair,
    scene_pair_ious,
)
from app.back.services.targets_service import GroundTruthScene, build_targets
from app.back.workers import initialize_worker_pool


class TestDeterministicSeeding:
    """The seed alone fixes every scene and detection."""

    def test_same_seed_same_dataset(self):
        cfg = SynthConfig(seed=3, n_images=6)
        assert generate_dataset(cfg) == generate_dataset(cfg)

    def test_different_seed_different_dataset(self):
        first = generate_dataset(SynthConfig(seed=3, n_images=4))
        second = generate_dataset(SynthConfig(seed=4, n_images=4))
        assert first != second

    def test_image_is_independent_of_run_length(self):
        short_scenes, short_dets = generate_dataset(SynthConfig(seed=5, n_images=2))
        long_scenes, long_dets = generate_dataset(SynthConfig(seed=5, n_images=8))
        assert long_scenes[:2] == short_scenes
        assert long_dets[:2] == short_dets

    def test_worker_count_does_not_change_output(self):
        cfg = SynthConfig.crowded(seed=11, n_images=12)
        serial = generate_dataset(cfg)
        initialize_worker_pool(3)
        assert generate_dataset(cfg) == serial

    def test_image_ids(self):
        scenes, _ = generate_dataset(SynthConfig(seed=2, n_images=3))
        assert [s.image_id for s in scenes] == ["synth-2-00000", "synth-2-00001", "synth-2-00002"]


def test_pair_placement_reaches_target_iou():
    front, rear = place_pair(0, 0, 40, 100, 0.5)
    assert iou(front, rear) == pytest.approx(0.5, abs=1e-6)
    assert pair_displacement(40, 0.5) == pytest.approx(40 / 3)


@pytest.mark.parametrize("target", [0.3, 0.45, 0.7, 0.95])
def test_pair_displacement_inverts_iou(target):
    front, rear = place_pair(10, 5, 33.0, 80.0, target)
    assert iou(front, rear) == pytest.approx(target, abs=1e-9)


def test_pair_displacement_rejects_bad_iou():
    with pytest.raises(ValueError):
        pair_displacement(40, 0.0)


def test_no_crowd_pairs_means_no_overlap():
    cfg = SynthConfig(crowd_pairs=0.0)
    for index in range(30):
        assert all(v < 0.1 for v in scene_pair_ious(generate_scene(cfg, index)))


def test_crowd_pairs_realize_requested_iou():
    cfg = SynthConfig(crowd_pairs=1.0, people_per_image=(6, 6), pair_iou_range=(0.5, 0.5))
    for index in range(10):
        scene = generate_scene(cfg, index)
        assert len(scene.boxes) == 6
        for k in range(0, 6, 2):
            assert iou(scene.boxes[k], scene.boxes[k + 1]) == pytest.approx(0.5, abs=1e-6)
            assert scene.visibility[k] == 1.0
            assert scene.visibility[k + 1] == pytest.approx(1 / 3)


def test_scenes_stay_inside_image():
    cfg = SynthConfig.crowded(image_width=320, image_height=200, height_range=(40.0, 120.0))
    for index in range(50):
        scene = generate_scene(cfg, index)
        assert all(box.inside(320, 200) for box in scene.boxes)
        assert 4 <= len(scene.boxes) <= 8


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(people_per_image=(5, 2))
    with pytest.raises(ValueError):
        SynthConfig(pair_iou_range=(0.0, 0.5))
    with pytest.raises(ValueError):
        SynthConfig(height_range=(80.0, 700.0))


def test_clean_detector_reproduces_ground_truth():
    cfg = SynthConfig(duplicates_per_gt=(0, 0), fp_rate=0.0, box_jitter_sigma=0.0)
    scene = generate_scene(cfg, 0)
    dets = generate_detections(scene, cfg, 0)
    assert [d.box for d in dets] == scene.boxes


def test_oracle_embeddings_separate_people():
    cfg = SynthConfig.crowded(duplicates_per_gt=(1, 1), fp_rate=0.0)
    for index in range(10):
        scene = generate_scene(cfg, index)
        dets = generate_detections(scene, cfg, index)
        # primary then one duplicate per person
        assert len(dets) == 2 * len(scene.boxes)
        for k in range(len(scene.boxes)):
            primary, duplicate = dets[2 * k], dets[2 * k + 1]
            assert dist(primary.embedding, duplicate.embedding) < 0.1
            for j in range(k + 1, len(scene.boxes)):
                assert dist(primary.embedding, dets[2 * j].embedding) > 0.9


def test_oracle_norms_carry_density():
    cfg = SynthConfig.crowded(duplicates_per_gt=(0, 0), fp_rate=0.0)
    scene = generate_scene(cfg, 1)
    dets = generate_detections(scene, cfg, 1)
    targets = build_targets(scene, r=4)
    by_index = {obj.index: obj.density for obj in targets.objects}
    for k, d in enumerate(dets):
        assert np.linalg.norm(d.embedding) == pytest.approx(max(by_index[k], 0.01))


def test_noisy_embeddings_stay_close_to_oracle():
    oracle = SynthConfig.crowded(duplicates_per_gt=(0, 0), fp_rate=0.0)
    noisy = oracle.model_copy(update={"embedding_mode": "noisy"})
    scene = generate_scene(oracle, 0)
    clean, perturbed = generate_detections(scene, oracle, 0), generate_detections(scene, noisy, 0)
    assert len(clean) == len(perturbed)
    for a, b in zip(clean, perturbed):
        assert a.embedding != b.embedding
        assert dist(a.embedding, b.embedding) < 0.9


def test_constant_embeddings_make_attribute_nms_greedy():
    cfg = SynthConfig.crowded(embedding_mode="constant")
    scenes, dets = generate_dataset(cfg.model_copy(update={"n_images": 15}))
    for image_dets in dets:
        assert len({d.embedding for d in image_dets}) == 1
        assert attribute_nms(image_dets) == greedy_nms(image_dets)


def test_background_false_positives_avoid_people():
    cfg = SynthConfig(duplicates_per_gt=(0, 0), fp_rate=4.0, box_jitter_sigma=0.0)
    for index in range(10):
        scene = generate_scene(cfg, index)
        dets = generate_detections(scene, cfg, index)
        for d in dets[len(scene.boxes):]:
            assert all(iou(d.box, box) < 0.3 for box in scene.boxes)
            assert 0.05 <= d.score <= 0.6


def test_decode_recovers_ground_truth_boxes():
    people = [BBox(6, 4, 14, 24), BBox(40, 30, 52, 60)]
    scene = GroundTruthScene(image_width=64, image_height=64, boxes=people)
    targets = build_targets(scene, r=4, predict_width=True)
    rows, cols = targets.center.shape
    pred = PredictedMaps(
        center_prob=targets.center.astype(float),
        scale=targets.scale.copy(),
        offset=targets.offset.copy(),
        attribute=np.ones((rows, cols, 4)) * 0.1,
    )
    dets = decode_detections(pred, r=4, score_threshold=0.5)
    assert len(dets) == 8
    for d in dets:
        nearest = max(people, key=lambda p: iou(p, d.box))
        np.testing.assert_allclose(d.box.as_list(), nearest.as_list(), atol=1e-9)
        assert d.embedding == (0.1, 0.1, 0.1, 0.1)


def test_decode_without_width_uses_aspect_ratio():
    pred = PredictedMaps(
        center_prob=np.array([[0.2, 0.9]]),
        scale=np.full((1, 2, 1), np.log(100.0)),
        offset=np.full((1, 2, 2), 0.5),
        attribute=np.zeros((1, 2, 2)),
    )
    dets = decode_detections(pred, r=4, score_threshold=0.1, aspect_ratio=0.5)
    assert [d.score for d in dets] == [0.9, 0.2]
    assert dets[0].box.as_list() == pytest.approx([-19.0, -48.0, 31.0, 52.0])
    assert decode_detections(pred, r=4, score_threshold=0.95) == []
    with pytest.raises(ValueError):
        decode_detections(pred, r=0)


class TestBench:
    """Synth -> NMS -> eval comparison of the variants."""

    def test_table_layout(self):
        table = run_bench(SynthConfig.crowded(seed=1, n_images=3), n_seeds=2)
        assert list(table.columns) == BENCH_COLUMNS
        assert len(table) == 8
        assert list(summarize(table)["variant"]) == ["greedy", "density", "diversity", "attribute"]

    def test_bench_is_reproducible(self):
        cfg = SynthConfig.crowded(seed=7, n_images=5)
        first = bench_to_csv(run_bench(cfg, n_seeds=2))
        assert bench_to_csv(run_bench(cfg, n_seeds=2)) == first
        initialize_worker_pool(3)
        assert bench_to_csv(run_bench(cfg, n_seeds=2)) == first

    def test_attribute_nms_wins_on_crowds(self):
        table = run_bench(
            SynthConfig.crowded(seed=0, n_images=10),
            variants=["greedy", "density", "attribute"],
            n_seeds=20,
        )
        per_seed = table.pivot(index="seed", columns="variant", values="mr2")
        assert len(per_seed) == 20
        assert (per_seed["attribute"] <= per_seed["greedy"]).all()
        means = table.groupby("variant")["mr2"].mean()
        assert means["attribute"] < means["density"]
        fps = table.groupby("variant")["false_positives"].sum()
        assert fps["attribute"] <= fps["density"]
