import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _flag(name, default="0"):
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


# Paths
PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
CASES_DIR = os.getenv("CASES_DIR", os.path.join(PROJECT_ROOT, "data", "cases"))
TRACE_DIR = os.getenv("TRACE_DIR", "traces")

# NLP solver settings
NLP_MAX_OUTER_ITERATIONS = int(os.getenv("NLP_MAX_OUTER_ITERATIONS", 200))
NLP_MAX_INNER_ITERATIONS = int(os.getenv("NLP_MAX_INNER_ITERATIONS", 100))
NLP_FEASIBILITY_TOL = float(os.getenv("NLP_FEASIBILITY_TOL", 1e-6))
NLP_OPTIMALITY_TOL = float(os.getenv("NLP_OPTIMALITY_TOL", 1e-6))
NLP_INITIAL_PENALTY = float(os.getenv("NLP_INITIAL_PENALTY", 10.0))
NLP_PENALTY_GROWTH = float(os.getenv("NLP_PENALTY_GROWTH", 10.0))
NLP_PENALTY_CAP = float(os.getenv("NLP_PENALTY_CAP", 1e10))

# SDP solver settings
SDP_TOLERANCE = float(os.getenv("SDP_TOLERANCE", 1e-7))
SDP_MAX_ITERATIONS = int(os.getenv("SDP_MAX_ITERATIONS", 100))
SDP_MAX_BLOCK_SIZE = int(os.getenv("SDP_MAX_BLOCK_SIZE", 200))

# Stage-3 Newton refinement
NEWTON_MAX_ITERATIONS = int(os.getenv("NEWTON_MAX_ITERATIONS", 100))
NEWTON_TOLERANCE = float(os.getenv("NEWTON_TOLERANCE", 1e-9))

# Pipeline settings
INFEASIBILITY_TOL = float(os.getenv("INFEASIBILITY_TOL", 1e-6))
BUDGET_MARGIN = float(os.getenv("BUDGET_MARGIN", 1e-4))
BUDGET_MARGIN_ATOL = float(os.getenv("BUDGET_MARGIN_ATOL", 1e-6))
SDP_BUDGET_MARGIN = float(os.getenv("SDP_BUDGET_MARGIN", 1e-3))
SDP_BUDGET_RETRIES = int(os.getenv("SDP_BUDGET_RETRIES", 2))
BATCH_WORKERS = int(os.getenv("BATCH_WORKERS", 4))

# Logging settings
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("LOG_FILE", "logs/feasproj.log")

# Test settings
RUN_SLOW_TESTS = _flag("RUN_SLOW_TESTS")
