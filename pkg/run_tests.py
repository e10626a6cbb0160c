"""
occ 单元测试入口 (端到端验收见 tests/e2e_test.py)。

用法:
    python run_tests.py                   # tests/test_*.py 全部
    python run_tests.py steady cpath      # 只跑 test_steady.py 与 test_cpath.py
    python run_tests.py -x -q             # 首个失败即停, 精简输出
"""
import argparse
import sys
import unittest


def build_suite(modules) -> unittest.TestSuite:
    loader = unittest.TestLoader()
    if not modules:
        return loader.discover("tests", pattern="test_*.py", top_level_dir=".")
    names = []
    for m in modules:
        if not m.startswith("tests."):
            m = "tests." + (m if m.startswith("test_") else "test_" + m)
        names.append(m)
    return loader.loadTestsFromNames(names)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="occ 单元测试")
    parser.add_argument("modules", nargs="*", help="模块名 (如 steady 或 tests.test_steady)")
    parser.add_argument("-x", "--failfast", action="store_true", help="首个失败即停止")
    parser.add_argument("-q", "--quiet", action="store_true", help="不逐项打印用例名")
    args = parser.parse_args(argv)

    runner = unittest.TextTestRunner(verbosity=1 if args.quiet else 2, failfast=args.failfast)
    result = runner.run(build_suite(args.modules))

    print("\n" + "=" * 60)
    broken = [test.id() for test, _ in result.failures + result.errors]
    if not broken:
        skipped = f", 跳过 {len(result.skipped)}" if result.skipped else ""
        print(f"\033[92m✅ {result.testsRun} 项通过{skipped}\033[0m")
        return 0
    print(f"\033[91m❌ {len(broken)} 项失败或出错:\033[0m")
    for name in broken:
        print(f"   - {name}")
    return 1


if __name__ == "__main__":
    sys.exit(main())
