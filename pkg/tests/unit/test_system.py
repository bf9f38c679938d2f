from __future__ import annotations

import threading

import pytest

from system import config as config_module
from system.config import CONFIG, deep_merge, load_yaml, resolve_threads
from system.errors import (
    EXIT_RUNTIME,
    EXIT_VALIDATION,
    ConfigError,
    HarnessError,
    InputError,
)
from system.workers import WorkerPool


# ── Config ────────────────────────────────────────────────────────────────────

class TestConfig:
    def test_defaults_block_loaded(self):
        defaults = CONFIG["defaults"]
        assert defaults["score"]["kind"] == "APS"
        assert set(defaults["methods"]) == {"ORACLE_CP", "NOISY_CP", "NRES_CP", "NR_CP"}
        assert CONFIG["runtime"]["threads"] >= 1

    def test_deep_merge_is_recursive_and_pure(self):
        base = {"splits": {"n_splits": 10, "calib_fraction": 0.5}, "alpha": 0.1}
        merged = deep_merge(base, {"splits": {"n_splits": 3}})
        assert merged == {"splits": {"n_splits": 3, "calib_fraction": 0.5}, "alpha": 0.1}
        assert base["splits"]["n_splits"] == 10

    def test_env_override_file(self, monkeypatch):
        monkeypatch.setenv("NOISY_CP_ENV", "dev")
        built = config_module._build_config()
        assert built["env"]["active"] == "dev"
        assert built["defaults"]["splits"]["n_splits"] < 1000

    def test_missing_yaml(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_yaml(tmp_path / "missing.yaml")

    @pytest.mark.parametrize("raw, expected", [("3", 3), (2, 2)])
    def test_explicit_thread_cap(self, raw, expected):
        assert resolve_threads(raw) == expected

    @pytest.mark.parametrize("raw", ["0", "-2", "lots"])
    def test_auto_thread_cap(self, raw):
        assert resolve_threads(raw) >= 1

    def test_thread_cap_from_environment(self, monkeypatch):
        monkeypatch.setenv("NOISY_CP_THREADS", "5")
        assert resolve_threads() == 5


# ── Errors ────────────────────────────────────────────────────────────────────

class TestErrors:
    def test_exit_codes(self):
        assert ConfigError("x").exit_code == EXIT_VALIDATION
        assert InputError("x").exit_code == EXIT_VALIDATION
        assert HarnessError("x").exit_code == EXIT_RUNTIME

    def test_input_error_row(self):
        assert InputError("bad", row=4).row == 4


# ── Worker pool ───────────────────────────────────────────────────────────────

class TestWorkerPool:
    def test_results_in_task_order(self):
        pool = WorkerPool(threads=4)
        assert pool.map("square", lambda i: i * i, 50) == [i * i for i in range(50)]

    def test_uses_several_threads(self):
        seen = set()
        barrier = threading.Barrier(2, timeout=5)

        def task(_index):
            seen.add(threading.get_ident())
            barrier.wait()
            return True

        assert WorkerPool(threads=2).map("pair", task, 2) == [True, True]
        assert len(seen) == 2

    def test_serial_when_single_thread(self):
        names = WorkerPool(threads=1).map("serial", lambda _i: threading.current_thread().name, 3)
        assert names == [threading.current_thread().name] * 3

    def test_crash_becomes_harness_error(self):
        def boom(index):
            if index == 2:
                raise ZeroDivisionError("boom")
            return index

        with pytest.raises(HarnessError):
            WorkerPool(threads=3).map("boom", boom, 4)

    def test_domain_errors_pass_through(self):
        def invalid(_index):
            raise ConfigError("bad alpha")

        with pytest.raises(ConfigError):
            WorkerPool(threads=2).map("invalid", invalid, 3)

    def test_empty(self):
        assert WorkerPool(threads=2).run("none", []) == []
