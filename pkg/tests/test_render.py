import numpy as np
import pytest

from colorrecon.render import ColormapSpec, composite, parse_colormap_range, render_heatmap


def test_zero_map_is_first_stop():
    img = render_heatmap(np.zeros((3, 4)))
    assert img.shape == (3, 4, 3) and img.dtype == np.uint8
    assert np.all(img == (0, 0, 139))


def test_values_at_or_above_hi_are_red():
    img = render_heatmap(np.array([[50.0, 80.0]]))
    assert img.tolist() == [[[255, 0, 0], [255, 0, 0]]]


def test_exact_stops():
    img = render_heatmap(np.array([[12.5, 25.0, 37.5]]))
    assert img.tolist() == [[[0, 255, 255], [0, 255, 0], [255, 255, 0]]]


def test_halfway_between_stops_rounds_half_up():
    # t = 0.125: green channel 127.5, blue (139 + 255) / 2 = 197
    assert render_heatmap(np.array([[6.25]])).tolist() == [[[0, 128, 197]]]


def test_negative_values_clamp_to_lo():
    assert np.all(render_heatmap(np.array([[-5.0]])) == (0, 0, 139))


def test_per_image_max_mode():
    spec = ColormapSpec(mode="per-image-max")
    img = render_heatmap(np.array([[0.0, 2.0]]), spec)
    assert img[0, 1].tolist() == [255, 0, 0]
    assert np.all(render_heatmap(np.zeros((2, 2)), spec) == (0, 0, 139))


def test_rendering_is_deterministic():
    d = np.random.default_rng(0).uniform(0, 60, (32, 32))
    assert render_heatmap(d).tobytes() == render_heatmap(d.copy()).tobytes()


def test_red_channel_non_decreasing_in_upper_half():
    ramp = np.linspace(25, 50, 101)[None, :]
    red = render_heatmap(ramp)[0, :, 0].astype(int)
    assert np.all(np.diff(red) >= 0)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"stops": ((0.0, (0, 0, 0)),)},
        {"stops": ((0.1, (0, 0, 0)), (1.0, (1, 1, 1)))},
        {"stops": ((0.0, (0, 0, 0)), (0.5, (1, 1, 1)), (0.5, (2, 2, 2)), (1.0, (3, 3, 3)))},
        {"lo": 5.0, "hi": 5.0},
        {"mode": "log"},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        ColormapSpec(**kwargs)


def test_parse_range():
    assert parse_colormap_range("0:30") == ColormapSpec(lo=0.0, hi=30.0)
    assert parse_colormap_range("auto").mode == "per-image-max"
    for bad in ["30", "a:b", "1:2:3", "10:5"]:
        with pytest.raises(ValueError):
            parse_colormap_range(bad)


def test_composite_layout():
    a = np.zeros((4, 5, 3), np.uint8)
    out = composite(a, a + 1, a + 2)
    assert out.shape == (4, 15, 3)
    assert out[0, 5, 0] == 1 and out[0, 14, 0] == 2
