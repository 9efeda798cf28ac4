import numpy as np
import pytest
from scipy import ndimage


def textured(h, w, seed=0, sigma=1.5):
    """Smooth random texture in [0, 1]."""
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((h, w)), sigma, mode="wrap")
    img -= img.min()
    return img / img.max()


def shifted_pair(h, w, dx, dy, seed=0, pad=12):
    """``next`` is ``prev`` moved by (dx, dy) whole pixels (crop of a larger texture)."""
    big = textured(h + 2 * pad, w + 2 * pad, seed)
    prev = big[pad:pad + h, pad:pad + w]
    nxt = big[pad - dy:pad - dy + h, pad - dx:pad - dx + w]
    return prev, nxt


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY = dict(vocab_size=8, c_grid="1,10")


@pytest.fixture(scope="session")
def tiny_video(tmp_path_factory):
    """A two-action synthetic video on disk plus its saved extraction."""
    from egotraj.config import Config
    from egotraj.pipeline import extract_video, save_extraction
    from egotraj.synth import SyntheticSpec, generate_video, write_video
    from egotraj.video_io import load_frame_sequence

    root = tmp_path_factory.mktemp("tiny")
    spec = SyntheticSpec(classes=("translate-right", "stir"), frames_per_action=40, width=72, height=56)
    write_video(generate_video(spec, seed=3), root / "frames")
    cfg = Config(**TINY)
    ext = extract_video(load_frame_sequence(root / "frames"), cfg)
    save_extraction(root / "video.ext", ext)
    return root, ext, cfg
