#!/usr/bin/env python3
"""
Standalone runner for the test_*.py scripts
Runs each test function, prints ✅ / ❌ and exits 1 on any failure;
tests taking a `tmp_path` argument get a fresh scratch directory
"""

import inspect
import shutil
import sys
import tempfile
import traceback
from pathlib import Path


def run_tests(title, tests):
    """Run tests in order, the way pytest would call them"""
    print(f"=== {title} ===")
    failed = []
    for test in tests:
        scratch = None
        try:
            kwargs = {}
            if 'tmp_path' in inspect.signature(test).parameters:
                scratch = Path(tempfile.mkdtemp(prefix='lumen-test-'))
                kwargs['tmp_path'] = scratch
            test(**kwargs)
            print(f"✅ {test.__name__}")
        except Exception as e:
            print(f"❌ {test.__name__}: {e!r}")
            traceback.print_exc()
            failed.append(test.__name__)
        finally:
            if scratch is not None:
                shutil.rmtree(scratch, ignore_errors=True)

    if failed:
        print(f"\n❌ {len(failed)} of {len(tests)} tests failed: {', '.join(failed)}")
        sys.exit(1)
    print(f"\n✅ All {len(tests)} tests passed!")
