"""
配置层与错误处理测试
"""
import pytest

from src.config.config import (
    AppConfig,
    ConfigManager,
    ReportFormat,
    SignatureMode,
    Strategy,
    apply_overrides,
    flatten_config,
    parse_config_text,
)
from src.utils.exceptions import (
    AcceptanceError,
    ConfigError,
    ErrorHandler,
    PlanError,
    ReportIOError,
    TraceStructureError,
    get_user_friendly_message,
)


class TestDefaults:

    def test_defaults(self):
        config = AppConfig()
        assert config.workload.k == 1 << 20
        assert config.timing.t_tran == 50.0
        assert config.timing.t_commit == 8.0
        assert config.timing.t_cpu == pytest.approx(2.0 / 3.0)
        assert config.sig.mode == SignatureMode.EXACT_SET
        assert config.experiment.strategies == [Strategy.CONDA, Strategy.MRCN]
        assert config.experiment.format == ReportFormat.CSV
        assert config.engine.fine_grained_access_cost is None

    def test_flatten(self):
        flat = flatten_config(AppConfig())
        assert flat["timing.t_tran"] == 50.0
        assert flat["experiment.breakpoints"] == [5]


class TestOverrides:

    def test_comma_lists_and_coercion(self):
        config = apply_overrides(AppConfig(), {
            "experiment.f_nmp": "0.1, 0.5",
            "experiment.strategies": "mrcn",
            "workload.k": "4096",
            "engine.fine_grained_access_cost": "none",
        })
        assert config.experiment.f_nmp == [0.1, 0.5]
        assert config.experiment.strategies == [Strategy.MRCN]
        assert config.workload.k == 4096
        assert config.engine.fine_grained_access_cost is None

    def test_invalid_value_names_key(self):
        with pytest.raises(ConfigError) as info:
            apply_overrides(AppConfig(), {"timing.t_tran": "0"})
        assert info.value.config_key == "timing.t_tran"

    @pytest.mark.parametrize("key", ["timing.unknown", "nosection.k", "timing", "a.b.c"])
    def test_unknown_keys(self, key):
        with pytest.raises(ConfigError):
            apply_overrides(AppConfig(), {key: "1"})

    def test_fraction_lists_checked(self):
        with pytest.raises(ConfigError):
            apply_overrides(AppConfig(), {"experiment.f_nmp": "0.5,1.5"})
        with pytest.raises(ConfigError):
            apply_overrides(AppConfig(), {"experiment.granularity": "0"})

    def test_config_text(self):
        text = "# 时序\ntiming.t_tran = 70\n\nsig.mode=bloom  # 布隆\n"
        assert parse_config_text(text) == {"timing.t_tran": "70", "sig.mode": "bloom"}
        with pytest.raises(ConfigError):
            parse_config_text("timing.t_tran 70\n")


class TestConfigManager:

    def test_environment_overrides(self, monkeypatch):
        monkeypatch.setenv("NMP_SIM_TIMING__T_TRAN", "70")
        manager = ConfigManager(env_file=None)
        assert manager.config.timing.t_tran == 70.0

    def test_precedence(self, monkeypatch, tmp_path):
        monkeypatch.setenv("NMP_SIM_TIMING__T_TRAN", "70")
        path = tmp_path / "run.cfg"
        path.write_text("timing.t_tran=80\ntiming.t_commit=4\n", encoding="utf-8")
        manager = ConfigManager(env_file=None)
        assert manager.load(str(path)).timing.t_tran == 80.0
        config = manager.load(str(path), {"timing.t_tran": "90"})
        assert config.timing.t_tran == 90.0
        assert config.timing.t_commit == 4.0

    def test_missing_file(self, tmp_path):
        with pytest.raises(ReportIOError):
            ConfigManager(env_file=None).load(str(tmp_path / "absent.cfg"))

    def test_update(self):
        manager = ConfigManager(env_file=None)
        manager.update(sig__hashes=5)
        assert manager.config.sig.hashes == 5
        assert manager.flatten()["sig.hashes"] == 5


class TestErrorHandler:

    def test_exit_codes(self):
        assert ErrorHandler.exit_code(ConfigError("x")) == 1
        assert ErrorHandler.exit_code(PlanError("x")) == 1
        assert ErrorHandler.exit_code(TraceStructureError("x", "t.trace")) == 1
        assert ErrorHandler.exit_code(ReportIOError("x", "out.csv")) == 2
        assert ErrorHandler.exit_code(OSError("disk")) == 2
        assert ErrorHandler.exit_code(AcceptanceError("x")) == 3

    def test_io_wrapping(self):
        wrapped = ErrorHandler.handle_io_error(FileNotFoundError("gone"), "a.csv")
        assert isinstance(wrapped, ReportIOError)
        assert wrapped.path == "a.csv"
        assert ErrorHandler.handle_io_error(wrapped, "b.csv") is wrapped

    def test_friendly_messages(self):
        assert "timing.t_tran" in get_user_friendly_message(ConfigError("bad", config_key="timing.t_tran"))
        message = get_user_friendly_message(AcceptanceError("failed", failed_checks=["oracle"]))
        assert "oracle" in message

    def test_to_dict(self):
        data = PlanError("empty", blocks=0).to_dict()
        assert data["error_type"] == "plan_error"
        assert data["context"] == {"blocks": 0}
