import io
import math
from typing import List, Optional, Sequence, Tuple

import cv2
import numpy as np
from PIL import Image

from ..errors import MediaError
from ..schemas import Box


def frame_timestamps(span: Tuple[float, float], fps: float, max_frames: int) -> List[float]:
    """
    Timestamps start + k/fps strictly below end, at least one (the start).

    When more candidates exist than max_frames, keep max_frames of them spread
    uniformly over the candidate index range.
    """
    start, end = span
    if not start < end:
        raise ValueError("span start must be < end")
    if fps <= 0 or max_frames < 1:
        raise ValueError("fps and max_frames must be positive")
    n = max(1, math.ceil(round((end - start) * fps, 9)))
    idx = np.arange(n)
    if n > max_frames:
        idx = np.round(np.linspace(0, n - 1, max_frames)).astype(int)
    return [start + int(k) / fps for k in idx]


def crop_image(img_bgr: np.ndarray, crop: Optional[Box]) -> np.ndarray:
    if crop is None:
        return img_bgr
    h, w = img_bgr.shape[:2]
    x0, y0 = max(0, int(crop.x0)), max(0, int(crop.y0))
    x1, y1 = min(w, int(math.ceil(crop.x1))), min(h, int(math.ceil(crop.y1)))
    if x1 <= x0 or y1 <= y0:
        raise MediaError(f"crop {crop.as_list()} falls outside the {w}x{h} frame")
    return img_bgr[y0:y1, x0:x1]


def downscale_if_needed(img_bgr: np.ndarray, max_side: int) -> np.ndarray:
    """Shrink so the longest side is at most max_side; aspect ratio is kept."""
    h, w = img_bgr.shape[:2]
    long_edge = max(h, w)
    if long_edge <= max_side:
        return img_bgr
    scale = max_side / long_edge
    new_w = max(1, int(round(w * scale)))
    new_h = max(1, int(round(h * scale)))
    return cv2.resize(img_bgr, (new_w, new_h), interpolation=cv2.INTER_AREA)


def encode_jpeg(img_bgr: np.ndarray, quality: int, max_side: int) -> bytes:
    img = downscale_if_needed(img_bgr, max_side)
    pil = Image.fromarray(cv2.cvtColor(img, cv2.COLOR_BGR2RGB))
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=quality)
    return buf.getvalue()


def load_image(path: str) -> np.ndarray:
    """Load a still image as a BGR array."""
    try:
        img = Image.open(path).convert("RGB")
    except (OSError, ValueError) as e:
        raise MediaError(f"cannot read image {path}: {e}") from e
    return cv2.cvtColor(np.array(img), cv2.COLOR_RGB2BGR)


def read_frames(path: str, timestamps: Sequence[float]) -> List[np.ndarray]:
    """Decode the frames nearest to each timestamp (seconds) of a video file."""
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise MediaError(f"cannot open video {path}")
    try:
        native_fps = cap.get(cv2.CAP_PROP_FPS) or 30.0
        count = int(cap.get(cv2.CAP_PROP_FRAME_COUNT) or 0)
        frames = []
        for t in timestamps:
            idx = int(round(t * native_fps))
            if count > 0:
                idx = min(idx, count - 1)
            cap.set(cv2.CAP_PROP_POS_FRAMES, idx)
            ok, frame = cap.read()
            if not ok or frame is None:
                raise MediaError(f"cannot decode frame {idx} (t={t:.3f}s) of {path}")
            frames.append(frame)
        return frames
    finally:
        cap.release()


def video_duration(path: str) -> float:
    """Length of a video file in seconds, from its frame count and native fps."""
    cap = cv2.VideoCapture(path)
    if not cap.isOpened():
        raise MediaError(f"cannot open video {path}")
    try:
        fps = cap.get(cv2.CAP_PROP_FPS) or 0.0
        count = cap.get(cv2.CAP_PROP_FRAME_COUNT) or 0.0
    finally:
        cap.release()
    if fps <= 0 or count <= 0:
        raise MediaError(f"cannot determine the duration of {path}")
    return count / fps
