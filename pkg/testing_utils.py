"""
Shared helpers for the root-level test scripts
"""

import sys
import time
import traceback
from contextlib import contextmanager


@contextmanager
def raises(exc_type, match=None):
    """Assert that the block raises exc_type, optionally with `match` in the message"""
    try:
        yield
    except exc_type as e:
        if match is not None and match not in str(e):
            raise AssertionError(f"{exc_type.__name__} raised without '{match}': {e}")
        return
    raise AssertionError(f"{exc_type.__name__} not raised")


def collect(namespace):
    """test_* callables of a module namespace, in definition order"""
    return [fn for name, fn in namespace.items() if name.startswith('test_') and callable(fn)]


def run_tests(title, tests):
    """Run tests, print a ✓/✗ line per test and a summary; returns an exit code"""
    print("=" * 60)
    print(title)
    print("=" * 60)

    failed = 0
    for test in tests:
        started = time.perf_counter()
        try:
            test()
            print(f"  ✓ {test.__name__} ({time.perf_counter() - started:.2f}s)")
        except Exception:
            failed += 1
            print(f"  ✗ {test.__name__}")
            traceback.print_exc(limit=3, file=sys.stdout)

    print("\n" + "=" * 60)
    if failed:
        print(f"✗ {failed} OF {len(tests)} TESTS FAILED")
    else:
        print(f"✓ ALL {len(tests)} TESTS PASSED")
    print("=" * 60 + "\n")
    return 1 if failed else 0
