import sys
sys.path.append('.')

import unittest
import doctest
import qfedlab._utils as qf_utils
import qfedlab.circuit as qf_circuit
import qfedlab.nn as qf_nn
import qfedlab.qlstm as qf_qlstm
import qfedlab.lstm as qf_lstm
import qfedlab.data as qf_data
import qfedlab.preprocessing as qf_preprocessing
import qfedlab.metrics as qf_metrics
import qfedlab.federation as qf_federation
import qfedlab.threat as qf_threat

def load_tests(loader, tests, ignore):
    for module in [qf_utils, qf_circuit, qf_nn, qf_qlstm, qf_lstm, qf_data, qf_preprocessing, qf_metrics,
                   qf_federation, qf_threat]:
        tests.addTests(doctest.DocTestSuite(module))
    tests.addTests(doctest.DocFileSuite("../readme.md"))


    for all_test_suite in unittest.defaultTestLoader.discover('test/', pattern='test_*.py'):
        for test_suite in all_test_suite:
            tests.addTests(test_suite)

    return tests
