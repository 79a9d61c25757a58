import json

import numpy as np
import pytest

from indoornav.exceptions import SceneError
from indoornav.scene import (
    MANIFEST_NAME,
    Action,
    AgentState,
    GridScene,
    Heading,
    LocationRecord,
    SceneCategory,
    TargetRef,
    load_scene,
    load_scenes,
    reference_dataset_stats,
    save_scene,
    scene_from_mask,
    scene_stats,
    stats_table,
    total_stats,
    with_targets,
)


def test_heading_turns():
    for heading in Heading:
        assert heading.turn_left().turn_right() is heading
        h = heading
        for _ in range(4):
            h = h.turn_left()
        assert h is heading
    assert Heading.N.turn_right() is Heading.E
    assert Heading.N.turn_left() is Heading.W


def test_heading_parse():
    assert Heading.parse("e") is Heading.E
    assert Heading.parse(2) is Heading.S
    with pytest.raises(SceneError):
        Heading.parse("up")


def test_action_inverse():
    for action in Action:
        assert action.inverse.inverse is action
    assert Action.MOVE_FORWARD.inverse is Action.MOVE_BACKWARD
    assert Action.TURN_LEFT.inverse is Action.TURN_RIGHT


def test_scene_from_mask_row_major(u_room):
    assert u_room.num_locations == 7
    assert u_room.num_states == 28
    assert [(loc.row, loc.col) for loc in u_room.locations][:3] == [(0, 0), (0, 1), (0, 2)]
    assert u_room.location_at(1, 1) is None
    assert u_room.location_at(1, 0) == 3
    assert u_room.pano_size == (64, 16)


def test_neighbor_follows_heading(room_3x3):
    center = room_3x3.location_at(1, 1)
    assert room_3x3.neighbor(center, Heading.N) == room_3x3.location_at(0, 1)
    assert room_3x3.neighbor(center, Heading.E) == room_3x3.location_at(1, 2)
    assert room_3x3.neighbor(center, Heading.S) == room_3x3.location_at(2, 1)
    assert room_3x3.neighbor(center, Heading.W) == room_3x3.location_at(1, 0)
    assert room_3x3.neighbor(room_3x3.location_at(0, 0), Heading.N) is None


def test_state_index_roundtrip(room_3x3):
    for i, state in enumerate(room_3x3.states()):
        assert room_3x3.state_index(state) == i
        assert room_3x3.index_state(i) == state


def test_position_uses_cell_size(room_3x3):
    loc = room_3x3.location_at(2, 1)
    assert room_3x3.position(loc) == pytest.approx((0.5, 1.0))


def test_location_outside_free_cells_rejected():
    pano = np.zeros((16, 64, 3), dtype=np.uint8)
    with pytest.raises(SceneError) as exc:
        GridScene("bad", 2, 2, 0.5, frozenset({(0, 0)}), (LocationRecord(0, 1, 1, pano),))
    assert exc.value.code == "invalid-scene"


def test_duplicate_location_cell_rejected():
    pano = np.zeros((16, 64, 3), dtype=np.uint8)
    locations = (LocationRecord(0, 0, 0, pano), LocationRecord(1, 0, 0, pano))
    with pytest.raises(SceneError):
        GridScene("dup", 2, 2, 0.5, frozenset({(0, 0)}), locations)


def test_nonstandard_cell_size_needs_flag():
    mask = np.ones((2, 2), dtype=bool)
    with pytest.raises(SceneError):
        scene_from_mask(mask, cell_size=0.3)
    scene = scene_from_mask(mask, cell_size=0.3, custom_cell_size=True)
    assert scene.cell_size == pytest.approx(0.3)


def test_landmark_must_be_featureful(room_3x3):
    with pytest.raises(SceneError):
        with_targets(room_3x3, [TargetRef(0, Heading.N)], [TargetRef(0, Heading.E)])


def test_target_on_unknown_location(room_3x3):
    with pytest.raises(SceneError):
        with_targets(room_3x3, [], [TargetRef(99, Heading.N)])


def test_save_load_roundtrip(tmp_path, targeted_room):
    scene = targeted_room
    save_scene(scene, tmp_path / "pkg")
    loaded = load_scene(tmp_path / "pkg")
    assert loaded == scene
    assert loaded.landmark_targets == scene.landmark_targets


def test_save_is_deterministic(tmp_path, room_3x3):
    save_scene(room_3x3, tmp_path / "a")
    save_scene(room_3x3, tmp_path / "b")
    assert (tmp_path / "a" / MANIFEST_NAME).read_bytes() == (tmp_path / "b" / MANIFEST_NAME).read_bytes()
    for a, b in zip(sorted((tmp_path / "a" / "pano").iterdir()), sorted((tmp_path / "b" / "pano").iterdir())):
        assert a.read_bytes() == b.read_bytes()


def test_missing_manifest(tmp_path):
    with pytest.raises(SceneError) as exc:
        load_scene(tmp_path)
    assert exc.value.code == "missing-manifest"


def test_missing_panorama(tmp_path, room_3x3):
    save_scene(room_3x3, tmp_path / "pkg")
    (tmp_path / "pkg" / "pano" / "0.png").unlink()
    with pytest.raises(SceneError) as exc:
        load_scene(tmp_path / "pkg")
    assert exc.value.code == "panorama-count"


def test_unsupported_version(tmp_path, room_3x3):
    save_scene(room_3x3, tmp_path / "pkg")
    manifest = tmp_path / "pkg" / MANIFEST_NAME
    raw = json.loads(manifest.read_text())
    raw["version"] = 99
    manifest.write_text(json.dumps(raw))
    with pytest.raises(SceneError) as exc:
        load_scene(tmp_path / "pkg")
    assert exc.value.code == "unsupported-version"


def test_load_scenes(tmp_path, room_3x3, corridor):
    save_scene(room_3x3, tmp_path / "a")
    save_scene(corridor, tmp_path / "b")
    scenes = load_scenes([tmp_path / "a", tmp_path / "b"])
    assert [s.scene_id for s in scenes] == ["room-3x3", "corridor"]


def test_scene_stats(targeted_room):
    stats = scene_stats(targeted_room)
    assert stats.total_locs == 9
    assert stats.target_locs == 2
    assert stats.featureful_locs == 9
    assert stats.category == SceneCategory.OFFICE.value


def test_scene_stats_counts_locations_not_views(room_3x3):
    featureful = [TargetRef(0, Heading.E), TargetRef(0, Heading.W), TargetRef(4, Heading.N)]
    scene = with_targets(room_3x3, [TargetRef(0, Heading.E)], featureful)
    stats = scene_stats(scene)
    assert stats.featureful_locs == 2
    assert stats.featureful_locs <= stats.total_locs


def test_reference_dataset_stats():
    rows = reference_dataset_stats()
    assert len(rows) == 24
    assert sum(r.split == "train" for r in rows) == 15
    assert sum(r.split == "test" for r in rows) == 9
    total = total_stats(rows)
    assert total.total_locs == sum(r.total_locs for r in rows)
    for row in rows:
        assert row.featureful_locs <= row.total_locs


def test_stats_table_has_total_row(targeted_room):
    table = stats_table([scene_stats(targeted_room)])
    assert table.row_count == 2


def test_agent_state_str():
    assert str(AgentState(3, Heading.W)) == "3W"
