"""
Configuration file for the falconc flow labeling toolkit.
Defaults can be overridden through environment variables or a .env file.
"""
import os
from dotenv import load_dotenv

load_dotenv()

# Default JSON config consulted by the command line when --config is absent
FALCONC_CONFIG = os.getenv("FALCONC_CONFIG", "")
LOG_LEVEL = os.getenv("FALCONC_LOG_LEVEL", "INFO")

DEFAULT_SEED = int(os.getenv("FALCONC_SEED", "7"))

# Flow ingest
DEFAULT_IDLE_TIMEOUT = float(os.getenv("FALCONC_IDLE_TIMEOUT", "120"))  # seconds
# ID column, MAC addresses and their OUIs, and the application guesses
DEFAULT_DROP_COLUMNS = [
    "id",
    "expiration_id",
    "src_mac",
    "src_oui",
    "dst_mac",
    "dst_oui",
    "application_name",
    "application_category_name",
    "application_is_guessed",
    "application_confidence",
    "requested_server_name",
    "client_fingerprint",
    "server_fingerprint",
    "user_agent",
    "content_type",
]

# Feature pipeline
DEFAULT_TEST_FRACTION = 0.2

# Autoencoder
DEFAULT_HIDDEN_DIM = 80
DEFAULT_LATENT_DIM = 41
DEFAULT_MAX_EPOCHS = 100
DEFAULT_LEARNING_RATE = 1e-3
DEFAULT_BATCH_SIZE = 32
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPSILON = 1e-8
DEFAULT_PATIENCE = 10
DEFAULT_MIN_DELTA = 1e-5

# Decision boundary
DEFAULT_TAU = 0.6
DEFAULT_GAP = 0.3
DEFAULT_MARGIN = 0.05
DEFAULT_MAX_WIDTH = 0.5

# Latent dimension sweep
DEFAULT_LATENT_RANGE = (1, 49)
DEFAULT_TRIALS_PER_DIM = 5
DEFAULT_ROLLING_WINDOW = 5

# Profile tags
TRAIN_TAG = "train"
TEST_TAG = "test"
MALICIOUS_TAG = "malicious"
