"""Shared fixtures: reference data files, parsed jobs and isolated run directories."""

from pathlib import Path

import pytest
import structlog

from edaflow.models.flow import JobSpec
from edaflow.services.allocator import PriceList, load_options, load_price_list
from edaflow.services.eda_adapter import MockBackend
from edaflow.utils.validators import load_job_spec

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(autouse=True)
def reset_logging():
    yield
    structlog.reset_defaults()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def price_list() -> PriceList:
    return load_price_list()


@pytest.fixture
def measured_options_path() -> Path:
    return FIXTURES / "picorv32_options.json"


@pytest.fixture
def measured_options(measured_options_path, price_list):
    return load_options(measured_options_path, price_list)


@pytest.fixture
def picorv32_job() -> JobSpec:
    job = load_job_spec(FIXTURES / "picorv32_job.json")
    assert isinstance(job, JobSpec)
    return job


@pytest.fixture
def gcd_job() -> JobSpec:
    job = load_job_spec(FIXTURES / "gcd_job.json")
    assert isinstance(job, JobSpec)
    return job


@pytest.fixture
def mock_backend() -> MockBackend:
    return MockBackend()


@pytest.fixture
def runs_dir(tmp_path) -> Path:
    return tmp_path / "runs"
