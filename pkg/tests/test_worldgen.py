from dataclasses import replace
from itertools import combinations

import numpy as np
import pytest

from navattack.embedding import cosine_similarity, encode_image
from navattack.errors import InputError, ManifestError
from navattack.navgraph import is_connected, same_graph
from navattack.worldgen import (
    WorldParams,
    band_mask,
    check_groundability,
    landmark_node,
    load_world,
    make_world,
    render_concept,
    save_world,
    scene_layout,
)


def test_world_postconditions(small_world):
    g = small_world.graph
    assert len(g) == 40
    assert is_connected(g.node_ids, g.edges)
    labels = {c.label for c in small_world.concepts}
    assert len(labels) == len(small_world.concepts)
    assert set(small_world.ground_truth.values()) <= labels
    for label in small_world.landmark_labels:
        assert small_world.ground_truth[landmark_node(small_world, label)] == label
    assert len(small_world.landmark_labels) == 4


def test_edges_are_positive_and_undirected(small_world):
    g = small_world.graph
    for e in g.edges:
        assert e.cost > 0
        assert g.edge_cost(e.u, e.v) == g.edge_cost(e.v, e.u)


def test_concepts_are_unit_vectors(small_world):
    for c in small_world.concepts:
        assert np.linalg.norm(c.values) == pytest.approx(1.0, abs=1e-9)


def test_regeneration_is_bit_exact(small_world):
    again = make_world(7, 40, 4)
    assert same_graph(again.graph, small_world.graph)
    assert again.ground_truth == small_world.ground_truth
    assert np.array_equal(again.projection, small_world.projection)


def test_infeasible_counts_are_rejected():
    with pytest.raises(InputError):
        make_world(1, 3, 4)


def test_prototype_rendering_is_deterministic(small_world):
    concept = small_world.concept(small_world.landmark_labels[0])
    a = render_concept(small_world, concept, None)
    b = render_concept(small_world, concept, None)
    assert a.same_bits(b)
    silent = replace(small_world, params=replace(small_world.params, noise_amplitude=0.0))
    assert render_concept(silent, concept, 123).same_bits(a)


def test_noisy_rendering_stays_close_to_prototype(small_world, world_encoder):
    for c in small_world.concepts:
        proto = encode_image(world_encoder, render_concept(small_world, c, None))
        noisy = encode_image(world_encoder, render_concept(small_world, c, 99))
        assert cosine_similarity(proto, noisy) >= 0.8


def test_distinct_concepts_are_separated(small_world, world_encoder):
    concepts = small_world.concepts
    protos = {c.label: encode_image(world_encoder, render_concept(small_world, c, None)) for c in concepts}
    renders = {c.label: encode_image(world_encoder, render_concept(small_world, c, 5)) for c in concepts}
    pairs = list(combinations(concepts, 2))
    separated = sum(
        1 for a, b in pairs
        if cosine_similarity(protos[a.label], renders[b.label]) < cosine_similarity(protos[a.label], renders[a.label])
    )
    assert separated >= 0.95 * len(pairs)


def test_generated_world_is_groundable(small_world, world_encoder):
    assert check_groundability(world_encoder, small_world) == []


def test_large_world(world_encoder):
    world = make_world(11, 80, 5)
    assert len(world.graph) == 80
    assert len(world.landmark_labels) == 5
    assert check_groundability(world.params.encoder(), world) == []


def test_world_round_trip(tmp_path, small_world):
    save_world(small_world, str(tmp_path))
    loaded = load_world(str(tmp_path))
    assert same_graph(loaded.graph, small_world.graph)
    assert loaded.seed == small_world.seed
    assert loaded.ground_truth == small_world.ground_truth
    assert loaded.back_labels == small_world.back_labels
    assert loaded.params == small_world.params
    assert np.array_equal(loaded.projection, small_world.projection)
    assert np.array_equal(loaded.scene, small_world.scene)
    for a, b in zip(loaded.concepts, small_world.concepts):
        assert a.label == b.label and np.array_equal(a.values, b.values)


def test_load_world_needs_sidecar(tmp_path, small_world):
    save_world(small_world, str(tmp_path))
    (tmp_path / "world.json").unlink()
    with pytest.raises(ManifestError):
        load_world(str(tmp_path))


def test_params_validation():
    with pytest.raises(InputError):
        WorldParams(node_count=10, landmark_count=13).validate()
    with pytest.raises(InputError):
        WorldParams(noise_amplitude=0.9).validate()
    with pytest.raises(InputError):
        WorldParams(clipped_fraction=1.0).validate()
    with pytest.raises(InputError):
        WorldParams(clipped_fraction=-0.1).validate()


def test_scene_band_is_clipped_and_shared(small_world):
    params = small_world.params
    top, bottom = params.scene_rows()
    assert (top, bottom) == (10, 9)
    mask = band_mask(params.image_shape, top, bottom)
    assert mask.sum() == 19 * 32 * 3
    images = [img.pixels.ravel() for n in small_world.graph.nodes[:6] for img in n.images]
    band = images[0][mask]
    for pixels in images[1:]:
        assert np.array_equal(pixels[mask], band)
    clipped = np.count_nonzero((band == 0.0) | (band == 1.0))
    assert clipped >= mask.sum() - params.hidden_dim


def test_scene_band_is_invisible_to_the_encoder(small_world, world_encoder):
    params = small_world.params
    scene = scene_layout(params)
    assert np.abs(scene).max() <= 0.5
    assert np.allclose(world_encoder.w1 @ scene, 0.0, atol=1e-6)
    assert np.array_equal(small_world.scene, scene)
    img = small_world.graph.nodes[0].images[0]
    grey = img.pixels.ravel().astype(np.float64)
    grey[band_mask(params.image_shape, *params.scene_rows())] = 0.5
    assert np.allclose(encode_image(world_encoder, img), world_encoder.forward(grey), atol=1e-5)


def test_zero_clipped_fraction_has_no_band(small_world):
    params = replace(small_world.params, clipped_fraction=0.0)
    assert params.scene_rows() == (0, 0)
    assert not scene_layout(params).any()
