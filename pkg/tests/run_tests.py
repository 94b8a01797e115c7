"""
测试运行器 - 统一运行所有测试
"""
import sys
import os
from datetime import datetime

import pytest

TEST_DIR = os.path.dirname(os.path.abspath(__file__))

SUITES = [
    ("配置与错误处理", "test_config.py"),
    ("解析模型", "test_analytics.py"),
    ("轨迹生成与读写", "test_workload.py"),
    ("签名与校验", "test_protocol.py"),
    ("执行策略", "test_engine.py"),
    ("实验与命令行", "test_harness.py"),
]


def run_all_tests() -> bool:
    """逐个运行测试模块并汇总"""
    print("=" * 80)
    print("NMP 一致性仿真 - 完整测试套件")
    print("=" * 80)
    print(f"开始时间: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")

    passed_suites = 0
    for suite_name, module in SUITES:
        print(f"\n{'=' * 60}")
        print(f"运行 {suite_name} ({module})")
        print(f"{'=' * 60}")
        code = pytest.main(["-q", os.path.join(TEST_DIR, module)])
        if code == 0:
            print(f"✅ {suite_name} 通过")
            passed_suites += 1
        else:
            print(f"❌ {suite_name} 失败 (退出码 {int(code)})")

    print(f"\n{'=' * 80}")
    print("测试总结")
    print(f"{'=' * 80}")
    print(f"通过测试: {passed_suites}/{len(SUITES)}")
    print(f"成功率: {(passed_suites / len(SUITES)) * 100:.1f}%")

    if passed_suites == len(SUITES):
        print("🎉 所有测试通过！")
        return True
    print("⚠️  部分测试失败")
    return False


if __name__ == "__main__":
    success = run_all_tests()
    sys.exit(0 if success else 1)
