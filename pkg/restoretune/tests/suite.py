import unittest

from restoretune.tests.test_acceptance import TestAcceptance
from restoretune.tests.test_adapt import (TestAdaptConfig, TestFineTune, TestSelfSimilarMask,
                                          TestTransforms)
from restoretune.tests.test_config import TestConfig
from restoretune.tests.test_core import TestCore, TestImageFiles, TestRandomState
from restoretune.tests.test_corpus import TestCorpus, TestPretrain, TestSynthesis
from restoretune.tests.test_losses import TestLosses
from restoretune.tests.test_main import TestMain
from restoretune.tests.test_maskgen import TestMaskgen
from restoretune.tests.test_metrics import TestMetrics
from restoretune.tests.test_network import TestNetwork
from restoretune.tests.test_plot import TestPlot
