import pytest

import toyworld


@pytest.fixture(scope="session")
def toy_model():
    """The toy tone-word corpus with a fully trained model (trains once)."""
    return toyworld.trained_model()
