import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from maskattack.core import (AttackBudget, BinaryMask, Image, LogitMap, PointPrompt, PromptSet,
                             ValidationError, binarize, load_image, load_mask, sample_prompts,
                             save_image, save_mask)


def test_image_validation():
    Image(np.zeros((4, 5, 3)))
    Image(np.ones((4, 5)))  # grayscale promoted to a channel axis
    with pytest.raises(ValidationError):
        Image(np.full((4, 4, 3), 1.5))
    with pytest.raises(ValidationError):
        Image(np.full((4, 4, 3), np.nan))
    with pytest.raises(ValidationError):
        Image(np.zeros((4, 4, 2)))
    with pytest.raises(ValidationError):
        Image(np.zeros((0, 4, 3)))


def test_image_is_immutable():
    src = np.zeros((3, 3, 1))
    img = Image(src)
    src[0, 0, 0] = 1.0
    assert img.data[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_binarize_all_zero_is_background():
    assert not binarize(np.zeros((3, 4))).data.any()


def test_binarize_sign_pattern():
    mask = binarize(np.array([[-10, 0.1], [3, -0.1]]))
    assert mask.data.tolist() == [[False, True], [True, False]]


def test_binarize_matches_pixel_loop():
    rng = np.random.default_rng(3)
    logits = rng.normal(0, 5, size=(16, 16))
    logits[2, 3] = 0.0
    mask = binarize(LogitMap(logits))
    for i in range(16):
        for j in range(16):
            assert mask.data[i, j] == (logits[i, j] > 0)


def test_binarize_rejects_nonfinite():
    with pytest.raises(ValidationError):
        binarize(np.array([[np.inf, 0.0]]))


@given(st.lists(st.lists(st.booleans(), min_size=1, max_size=6), min_size=1, max_size=6)
       .filter(lambda rows: len({len(r) for r in rows}) == 1))
def test_binarize_of_signed_encoding_is_identity(rows):
    mask = BinaryMask(np.array(rows))
    assert binarize(np.where(mask.data, 1.0, -1.0)) == mask


def test_prompt_set_rules():
    with pytest.raises(ValidationError):
        PromptSet(())
    with pytest.raises(ValidationError):
        PromptSet((PointPrompt(1, 1), PointPrompt(1, 1)))
    ps = PromptSet(((0, 1), (2, 3)))
    assert ps.coords() == [(0, 1), (2, 3)]
    with pytest.raises(ValidationError):
        ps.check_bounds((3, 3))


def test_sample_single_pixel_region():
    img = Image(np.zeros((8, 8, 3)))
    region = np.zeros((8, 8), dtype=bool)
    region[5, 2] = True
    ps = sample_prompts(img, 1, seed=0, region=BinaryMask(region))
    assert ps.coords() == [(5, 2)]


def test_sample_is_deterministic():
    img = Image(np.zeros((16, 16, 3)))
    assert sample_prompts(img, 10, 4) == sample_prompts(img, 10, 4)
    assert sample_prompts(img, 10, 4) != sample_prompts(img, 10, 5)


def test_sample_region_too_small_names_counts():
    img = Image(np.zeros((8, 8, 3)))
    region = np.zeros((8, 8), dtype=bool)
    region[:1, :3] = True
    with pytest.raises(ValidationError, match="need 5 pixels, only 3 available"):
        sample_prompts(img, 5, 0, BinaryMask(region))


def test_sample_excludes_and_stays_in_region():
    img = Image(np.zeros((10, 10, 3)))
    region = np.zeros((10, 10), dtype=bool)
    region[2:5, 2:5] = True
    ps = sample_prompts(img, 8, 1, BinaryMask(region), exclude=[(3, 3)])
    assert (3, 3) not in ps.coords()
    assert all(region[r, c] for r, c in ps.coords())


def test_sample_uniformity_chi_square():
    # 100 prompts from a 64x64 image, 10^4 repeats: every pixel is equally likely
    img = Image(np.zeros((64, 64, 3)))
    counts = np.zeros(64 * 64)
    for seed in np.random.SeedSequence(7).generate_state(10_000):
        for r, c in sample_prompts(img, 100, int(seed)).coords():
            counts[r * 64 + c] += 1
    _, p = stats.chisquare(counts)
    assert p > 0.01


@settings(max_examples=30)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.integers(1, 50))
def test_budget_invariants(eps, frac, iters):
    step = eps * frac
    if eps == 0:
        AttackBudget(0.0, 0.0, iters)
    elif step > 0:
        b = AttackBudget(eps, step, iters)
        assert 0 < b.step_size <= b.epsilon <= 1
    with pytest.raises(ValidationError):
        AttackBudget(eps, eps + 0.1, iters)


def test_budget_rejects_bad_iterations():
    with pytest.raises(ValidationError):
        AttackBudget(0.1, 0.1, 0)


def test_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = Image(rng.integers(0, 256, size=(6, 7, 3)) / 255.0, id="x")
    save_image(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    assert np.allclose(back.data, img.data)
    mask = BinaryMask(rng.random((6, 7)) > 0.5)
    save_mask(mask, tmp_path / "m.png")
    assert load_mask(tmp_path / "m.png") == mask
