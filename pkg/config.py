import os
from dotenv import load_dotenv

load_dotenv()

class Config:
    """
    Central configuration for mbansec
    """

    # ------------------------
    # Logging
    # ------------------------
    LOG_PATH  = os.getenv("MBAN_LOG_PATH", "data/mbansec.log")
    LOG_LEVEL = os.getenv("MBAN_LOG_LEVEL", "INFO").upper()

    # ------------------------
    # Reproducibility
    # ------------------------
    DEFAULT_SEED    = int(os.getenv("MBAN_DEFAULT_SEED", "0"))
    DEFAULT_PROFILE = os.getenv("MBAN_DEFAULT_PROFILE", "baseline").lower()

    # ------------------------
    # Hub policy
    # ------------------------
    # mMaxBANSize of the standard
    BASELINE_MAX_BAN_SIZE = int(os.getenv("MBAN_BASELINE_MAX_BAN_SIZE", "64"))
    HARDENED_MAX_BAN_SIZE = int(os.getenv("MBAN_HARDENED_MAX_BAN_SIZE", "2048"))
    HARDENED_RATE_LIMIT   = int(os.getenv("MBAN_HARDENED_RATE_LIMIT", "5"))
    HUB_CAPACITY          = int(os.getenv("MBAN_HUB_CAPACITY", "50"))

    # ------------------------
    # Liveness (PeerUnreachable detector)
    # ------------------------
    BEACON_INTERVAL         = int(os.getenv("MBAN_BEACON_INTERVAL", "10"))
    LIVENESS_MISSED_BEACONS = int(os.getenv("MBAN_LIVENESS_MISSED_BEACONS", "3"))

    # ------------------------
    # Keys
    # ------------------------
    RETIRED_KEY_GRACE = int(os.getenv("MBAN_RETIRED_KEY_GRACE", "0"))
    KEYSTORE_PATH     = os.getenv("MBAN_KEYSTORE_PATH", "data/hub.bks")
    KEYSTORE_SALT     = os.getenv("MBAN_KEYSTORE_SALT", "mbansec-keystore")
    KEYSTORE_KDF_ITERATIONS = int(os.getenv("MBAN_KEYSTORE_KDF_ITERATIONS", "100000"))

    # ------------------------
    # Data paths
    # ------------------------
    SCENARIO_DIR    = os.getenv("MBAN_SCENARIO_DIR", "data/scenarios")
    ASSESSMENT_DATA = os.getenv("MBAN_ASSESSMENT_DATA", "data/assessment.yml")
