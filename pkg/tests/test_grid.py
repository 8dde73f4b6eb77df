import numpy as np
import pytest
from hypothesis import given, strategies as st

from topobench.grid import DomainMasks, RegionSelector, build_grid, select

dims3 = st.tuples(*[st.integers(1, 4)] * 3)
dims2 = st.tuples(*[st.integers(1, 5)] * 2)


@given(st.one_of(dims2, dims3))
def test_counts_and_index_round_trip(dims):
    g = build_grid(dims, 0.5)
    assert g.elem_count == np.prod(dims)
    assert g.node_count == np.prod([n + 1 for n in dims])
    assert g.dof_count == g.node_count * g.ndim
    nodes = np.arange(g.node_count)
    assert np.array_equal(g.node_index(*g.node_ijk(nodes).T), nodes)
    elems = np.arange(g.elem_count)
    assert np.array_equal(g.elem_index(*g.elem_ijk(elems).T), elems)


@given(st.one_of(dims2, dims3))
def test_connectivity_is_a_unit_cell(dims):
    g = build_grid(dims, (1.0,) * len(dims))
    conn = g.connectivity
    assert conn.shape == (g.elem_count, 2 ** g.ndim)
    lo = g.node_ijk(conn[:, 0])
    assert np.array_equal(lo, g.elem_ijk())
    span = g.node_ijk(conn.ravel()).reshape(g.elem_count, -1, g.ndim) - lo[:, None, :]
    assert span.min() == 0 and span.max() == 1
    # every element has distinct nodes
    assert all(len(set(row)) == conn.shape[1] for row in conn)


def test_edof_orders_components_within_nodes():
    g = build_grid((2, 1, 1))
    assert np.array_equal(g.edof[0, :3], g.connectivity[0, 0] * 3 + np.arange(3))
    assert g.edof.shape == (2, 24)


def test_node_dofs_component_filter():
    g = build_grid((1, 1, 1))
    assert np.array_equal(g.node_dofs([2, 0], components=[1]), [1, 7])


def test_plane_and_box_selection():
    g = build_grid((4, 2, 2), 2.0)
    left = select(g, RegionSelector.plane(0, 0.0))
    assert left.size == 3 * 3
    assert np.all(g.node_coords(left)[:, 0] == 0.0)
    cells = select(g, RegionSelector.box((0, 0, 0), (4.0, None, None), target="elements"))
    assert cells.size == 2 * 2 * 2
    faces = select(g, RegionSelector.plane(0, 8.0, target="elements"))
    assert np.all(g.elem_ijk(faces)[:, 0] == 3)


def test_point_selection_and_empty_warning(caplog):
    g = build_grid((2, 2))
    assert np.array_equal(select(g, RegionSelector.point((1.0, 1.0))), [4])
    assert select(g, RegionSelector.point((0.5, 0.5), radius=0.1)).size == 0
    assert "empty selection" in caplog.text


def test_elem_neighbors_cover_interior_faces():
    g = build_grid((3, 2, 2))
    faces = sum(e.size for e, _ in g.elem_neighbors)
    assert faces == 2 * 2 * 2 + 3 * 1 * 2 + 3 * 2 * 1


def test_domain_masks():
    g = build_grid((3, 3))
    m = DomainMasks(passive_void=[0, 0, 1], passive_solid=[8])
    assert m.passive_void.tolist() == [0, 1]
    assert m.active(g).sum() == 6 and m.design_domain(g).sum() == 7
    with pytest.raises(ValueError, match="overlap"):
        DomainMasks(passive_void=[1], passive_solid=[1])
    with pytest.raises(ValueError):
        DomainMasks(fixed_dofs=[99]).validate(g)


@pytest.mark.parametrize("dims,size", [((0, 1, 1), 1.0), ((1,), 1.0), ((1, 1), -1.0)])
def test_invalid_grids(dims, size):
    with pytest.raises(ValueError):
        build_grid(dims, size)
