import os
from dotenv import load_dotenv

load_dotenv()

# Endpoints
MAXSIM_API_BASE = os.getenv("MAXSIM_API_BASE", "http://localhost:8080/v1")
MAXSIM_API_KEY = os.getenv("MAXSIM_API_KEY", "EMPTY")
MAXSIM_EMBED_BASE = os.getenv("MAXSIM_EMBED_BASE", MAXSIM_API_BASE)
MAXSIM_EMBED_KEY = os.getenv("MAXSIM_EMBED_KEY", MAXSIM_API_KEY)
REQUEST_TIMEOUT_S = float(os.getenv("REQUEST_TIMEOUT_S", "120"))

# Models
DEFAULT_MODEL_ID = os.getenv("DEFAULT_MODEL_ID", "openbmb/MiniCPM-V-4_5")
DEFAULT_EMBEDDER_ID = os.getenv("DEFAULT_EMBEDDER_ID", "thenlper/gte-large")
MAX_OUTPUT_TOKENS = int(os.getenv("MAX_OUTPUT_TOKENS", "512"))

# Frame sampling
DEFAULT_FPS = float(os.getenv("DEFAULT_FPS", "1.0"))
DEFAULT_MAX_FRAMES = int(os.getenv("DEFAULT_MAX_FRAMES", "32"))
FRAME_JPEG_QUALITY = int(os.getenv("FRAME_JPEG_QUALITY", "90"))
FRAME_MAX_SIDE = int(os.getenv("FRAME_MAX_SIDE", "1024"))

# Manifest construction
CROP_PAD_RATIO = float(os.getenv("CROP_PAD_RATIO", "0.05"))

# Retry policy: 1-2-4-8-16 s
RETRY_ATTEMPTS = int(os.getenv("RETRY_ATTEMPTS", "5"))
RETRY_BASE_DELAY_S = float(os.getenv("RETRY_BASE_DELAY_S", "1.0"))
RETRY_MAX_DELAY_S = float(os.getenv("RETRY_MAX_DELAY_S", "16.0"))
RETRY_JITTER_S = float(os.getenv("RETRY_JITTER_S", "0.5"))

EMBED_BATCH_SIZE = int(os.getenv("EMBED_BATCH_SIZE", "64"))
WORKERS = int(os.getenv("WORKERS", "4"))

CACHE_DIR = os.getenv("CACHE_DIR", ".maxsim_cache")
OUT_DIR = os.getenv("OUT_DIR", "runs")
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")

# Stub endpoint service (app.py)
APP_PORT = int(os.getenv("APP_PORT", "8080"))
STUB_EMBED_DIM = int(os.getenv("STUB_EMBED_DIM", "64"))
