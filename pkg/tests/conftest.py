import random
import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from domain.catalog import Catalog, CatalogService
from domain.runtime import Engine, SimKernel


@pytest.fixture(scope="session")
def catalog() -> Catalog:
    """The bundled catalog, loaded once."""
    return CatalogService.get()


@pytest.fixture
def kernel(catalog: Catalog) -> SimKernel:
    """A fresh simulated kernel with no seeded bugs."""
    return SimKernel(catalog=catalog, seed=0, engine=Engine.INTERP)


@pytest.fixture
def rng() -> random.Random:
    return random.Random(1234)


@pytest.fixture
def client():
    """FastAPI TestClient with the app lifespan (task queue workers) running."""
    from fastapi.testclient import TestClient

    from main import create_app

    with TestClient(create_app()) as test_client:
        yield test_client
