"""
Triggers the creation of the run-record database. Running the script
creates the run_records and run_statistics tables at the URL given by
PERPETUITYLAB_DB (default sqlite:///perpetuitylab.db) if they don't
already exist.
"""
from DB.runs_db import create_database
from PerpetuityLab.settings import get_logger, DATABASE_URL

logger = get_logger(__name__)

if __name__ == "__main__":
    create_database()
    logger.info("Run-record database ready at %s", DATABASE_URL)
    print(f"Run-record database ready at {DATABASE_URL}")
