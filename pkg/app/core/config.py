import os

from dotenv import load_dotenv

# Fetch environmental variables
load_dotenv(override=False)

OUTPUT_ROOT = os.getenv("PWCLO_OUTPUT_ROOT") or "runs"
LOG_CONFIG = os.getenv("PWCLO_LOG_CONFIG") or "logging.ini"
LOG_LEVEL = os.getenv("PWCLO_LOG_LEVEL") or None

# Batch-element threads when neither the command line nor a config file sets them
try:
    WORKERS = max(1, int(os.environ["PWCLO_WORKERS"]))
except (KeyError, ValueError):
    WORKERS = None
