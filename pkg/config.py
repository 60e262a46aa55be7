import os
from dotenv import load_dotenv

load_dotenv()

# Đường dẫn gốc của dự án
BASE_PATH = os.path.dirname(os.path.abspath(__file__))

# Config JSON (McemConfig / StudyGrid defaults)
ZICP_CONFIG = os.getenv("ZICP_CONFIG", os.path.join(BASE_PATH, "config", "config.json"))

# Worker pool cap, shared by the E-step thread pool and the replicate process pool
ZICP_THREADS = int(os.getenv("ZICP_THREADS", str(os.cpu_count() or 1)))

# Logging
ZICP_LOG_LEVEL = os.getenv("ZICP_LOG_LEVEL", "INFO")
ZICP_LOG_FILE = os.getenv("ZICP_LOG_FILE", os.path.join("logs", "zicp.log"))

# API
ZICP_API_HOST = os.getenv("ZICP_API_HOST", "localhost")
ZICP_API_PORT = int(os.getenv("ZICP_API_PORT", "8000"))
