"""
SQLAlchemy object-relational configuration for run records.

Every PerpetuityLab command stores one row per run so that later runs of the
same config can be found and compared.

Classes:
--------
RunRecord : ORM class representing the "run_records" table.
    Stores the config hash, subcommand, seeds, wall time, library version,
    exit code and creation time of a run. Has a relationship to its
    statistics.

RunStatistic : ORM class representing the "run_statistics" table.
    Stores one named scalar result of a run with a provenance tag.

Variables:
----------
Base : sqlalchemy.orm.DeclarativeMeta
    Base class for ORM definitions.
engine : sqlalchemy.engine.Engine
    Engine bound to ``settings.DATABASE_URL``.
Session : sqlalchemy.orm.sessionmaker
    Session factory bound to ``engine``.

Notes:
------
- The database URL defaults to an SQLite file named ``perpetuitylab.db`` and
  can be changed with the ``PERPETUITYLAB_DB`` environment variable.
"""

import datetime
from sqlalchemy import (
    create_engine, Column, Integer, String, Float, DateTime, JSON, ForeignKey
)
from sqlalchemy.orm import relationship, sessionmaker, declarative_base
from PerpetuityLab.settings import get_logger, DATABASE_URL, VERSION

# Initialise logger
logger = get_logger(__name__)

Base = declarative_base()


class RunRecord(Base):
    """
    Run record table.

    Attributes
    ----------
    id : int
        Auto-incremented primary key.
    config_hash : str
        SHA-256 of the canonical config.
    subcommand : str
        Command that produced the run.
    seeds : list of int
        Root seeds, stored as JSON.
    wall_time : float
        Seconds spent in the command.
    version : str
        PerpetuityLab version.
    exit_code : int
        0 success, 2 property-check failure, 1 error.
    created : datetime
        UTC time the record was written.

    Relationships
    -------------
    statistics : list of RunStatistic
        Named results of the run.
    """

    __tablename__ = "run_records"

    id = Column(Integer, primary_key=True, autoincrement=True)
    config_hash = Column(String(64), nullable=False, index=True)
    subcommand = Column(String, nullable=False)
    seeds = Column(JSON, nullable=False)
    wall_time = Column(Float, nullable=True)
    version = Column(String, nullable=False)
    exit_code = Column(Integer, nullable=False)
    created = Column(DateTime, nullable=False,
                     default=lambda: datetime.datetime.now(datetime.timezone.utc))

    statistics = relationship("RunStatistic", back_populates="run",
                              cascade="all, delete-orphan")

    def __repr__(self):
        return (
            f"<RunRecord(subcommand={self.subcommand}, "
            f"config_hash={self.config_hash[:12]}, "
            f"exit_code={self.exit_code})>"
        )

    @classmethod
    def find_by_hash(cls, session, config_hash):
        """
        Retrieve all runs whose config hash starts with ``config_hash``, oldest first.

        Parameters
        ----------
        session : sqlalchemy.orm.Session
            The database session to use for the query.
        config_hash : str
            Hash or hash prefix to filter by.

        Returns
        -------
        list of RunRecord
        """
        return (session.query(cls)
                .filter(cls.config_hash.startswith(config_hash, autoescape=True))
                .order_by(cls.id).all())

    def statistics_dict(self):
        """The run statistics as ``{name: value}``."""
        return {stat.name: stat.value for stat in self.statistics}


class RunStatistic(Base):
    """
    Run statistics table.

    Attributes
    ----------
    id : int
        Auto-incremented primary key.
    run_id : int
        Foreign key to ``run_records.id``.
    name : str
        Dotted statistic name, e.g. ``lambda_star``.
    value : float
        The value; NaN and infinities are stored as given.
    provenance : str
        Where the value comes from: the subcommand that computed it.
    """

    __tablename__ = "run_statistics"

    id = Column(Integer, primary_key=True, autoincrement=True)
    run_id = Column(Integer, ForeignKey("run_records.id"), nullable=False)
    name = Column(String, nullable=False)
    value = Column(Float, nullable=True)
    provenance = Column(String, nullable=False)

    run = relationship("RunRecord", back_populates="statistics")


# Engines are shared per URL so an in-memory store survives between calls
_ENGINES = {}


def get_engine(database_url=None):
    """Return the (cached) engine for ``database_url``."""
    url = database_url or DATABASE_URL
    if url not in _ENGINES:
        _ENGINES[url] = create_engine(url, echo=False)
    return _ENGINES[url]


# "none" disables the run-record store
engine = get_engine(DATABASE_URL) if DATABASE_URL.lower() != "none" else None
Session = sessionmaker(bind=engine)


def create_database(database_url=None):
    """
    Create the run tables if they do not already exist.

    Raises
    ------
    Exception
        Logged and re-raised when the tables cannot be created.
    """
    try:
        Base.metadata.create_all(get_engine(database_url))
        logger.info("Run database initialised successfully.")
    except Exception as e:
        logger.error("Error creating database tables: %s", e)
        raise


def record_run(subcommand, config_hash, seeds, wall_time, exit_code, statistics,
               database_url=None):
    """
    Store a run and its statistics.

    Parameters
    ----------
    subcommand : str
        Command name, also used as the provenance tag.
    config_hash : str
        Hash of the config.
    seeds : list of int
        Root seeds.
    wall_time : float
        Seconds spent.
    exit_code : int
        Exit code of the command.
    statistics : dict
        ``{name: float}``.
    database_url : str, optional
        Store to write to.

    Returns
    -------
    int
        The id of the new record.
    """
    create_database(database_url)
    session = sessionmaker(bind=get_engine(database_url))()
    try:
        record = RunRecord(config_hash=config_hash, subcommand=subcommand,
                           seeds=[int(seed) for seed in seeds], wall_time=wall_time,
                           version=VERSION, exit_code=exit_code)
        for name, value in sorted(statistics.items()):
            record.statistics.append(RunStatistic(name=name, value=value, provenance=subcommand))
        session.add(record)
        session.commit()
        logger.info("Stored run %d (%s, hash %s)", record.id, subcommand, config_hash[:12])
        return record.id
    except Exception as e:
        session.rollback()
        logger.error("Failed to store run record: %s", e)
        raise
    finally:
        session.close()


def list_runs(config_hash=None, database_url=None):
    """
    Return stored runs as plain dicts, optionally filtered by config hash prefix.

    Returns
    -------
    list of dict
        ``id``, ``config_hash``, ``subcommand``, ``seeds``, ``wall_time``,
        ``version``, ``exit_code``, ``created`` and ``statistics``.
    """
    create_database(database_url)
    session = sessionmaker(bind=get_engine(database_url))()
    try:
        if config_hash:
            records = RunRecord.find_by_hash(session, config_hash)
        else:
            records = session.query(RunRecord).order_by(RunRecord.id).all()
        return [{
            "id": record.id,
            "config_hash": record.config_hash,
            "subcommand": record.subcommand,
            "seeds": record.seeds,
            "wall_time": record.wall_time,
            "version": record.version,
            "exit_code": record.exit_code,
            "created": record.created.isoformat(),
            "statistics": record.statistics_dict(),
        } for record in records]
    finally:
        session.close()
