import hypothesis
import pytest

# disable hypothesis deadline globally
hypothesis.settings.register_profile("ci", deadline=None)
hypothesis.settings.load_profile("ci")


@pytest.fixture
def write_csv(tmp_path):
    def _write_csv(text, filename="data.csv"):
        path = tmp_path / filename
        path.write_text(text, encoding="utf-8")
        return path

    return _write_csv
