#include <gtest/gtest.h>
#include <sys/stat.h>

#include <cmath>
#include <fstream>

#include "blockmerge/evaluation.hpp"
#include "blockmerge/fixture.hpp"
#include "test_util.hpp"

using namespace blockmerge;
using testutil::TempDir;

TEST(ApproximatedPreservation, BasicRatios) {
    EXPECT_DOUBLE_EQ(approximated_preservation(0.7, 0.7), 1.0);
    EXPECT_DOUBLE_EQ(approximated_preservation(1.0, 2.0), 0.5);
    EXPECT_DOUBLE_EQ(approximated_preservation(2.0, 1.0), 2.0);
}

TEST(ApproximatedPreservation, ZeroMergedLossClamps) {
    EXPECT_DOUBLE_EQ(approximated_preservation(1.0, 0.0), kApCap);
    EXPECT_DOUBLE_EQ(approximated_preservation(1e-12, 0.0), 1e-12 / kLossEpsilon);
}

TEST(ApproximatedPreservation, ScaleConsistent) {
    const double base = approximated_preservation(0.31, 0.62);
    for (double c : {2.0, 17.5, 1e-3})
        EXPECT_NEAR(approximated_preservation(0.31 * c, 0.62 * c), base, 1e-12);
}

TEST(ApproximatedPreservation, RejectsNonFinite) {
    EXPECT_THROW(approximated_preservation(std::nan(""), 1.0), NonFiniteLoss);
    EXPECT_THROW(approximated_preservation(1.0, INFINITY), NonFiniteLoss);
}

TEST(ObjectiveF, HarmonicMean) {
    EXPECT_DOUBLE_EQ(objective_f(1.0, 1.0), 1.0);
    EXPECT_NEAR(objective_f(1.0, 0.5), 2.0 / 3.0, 1e-12);
    EXPECT_DOUBLE_EQ(objective_f(0.0, 0.9), 0.0);
    EXPECT_DOUBLE_EQ(objective_f(0.0, 0.0), 0.0);
}

TEST(ObjectiveF, SymmetricAndBounded) {
    SplitMix64 rng(1);
    for (int i = 0; i < 200; ++i) {
        const double a = 2.0 * rng.next_unit();
        const double b = 2.0 * rng.next_unit();
        const double f = objective_f(a, b);
        EXPECT_DOUBLE_EQ(f, objective_f(b, a));
        EXPECT_LE(f, 0.5 * (a + b) + 1e-12);            // harmonic <= arithmetic
        EXPECT_LE(f, 2.0 * std::max(a, b) + 1e-12);
        EXPECT_GE(f, 0.0);
    }
}

TEST(PreservationRate, ReproducesReportedTableValues) {
    // merged-model vs source-model top-1/top-5 accuracies on two task splits
    const double organism = preservation_rate({38.02, 66.73}, {51.48, 78.54});
    const double inanimate = preservation_rate({32.49, 56.88}, {40.86, 66.53});
    EXPECT_NEAR(organism, 0.7941, 1e-4);
    EXPECT_NEAR(inanimate, 0.8251, 1e-4);
    EXPECT_NEAR(preservation_discrepancy(organism, inanimate), 0.0310, 1e-4);
}

TEST(PreservationRate, IdenticalMetricsGiveOne) {
    EXPECT_DOUBLE_EQ(preservation_rate({3.5, 9.1, 0.2}, {3.5, 9.1, 0.2}), 1.0);
}

TEST(PreservationRate, ErrorPaths) {
    EXPECT_THROW(preservation_rate({1.0}, {1.0, 2.0}), LengthMismatch);
    EXPECT_THROW(preservation_rate({}, {}), LengthMismatch);
    EXPECT_THROW(preservation_rate({1.0}, {0.0}), NonPositiveSource);
    EXPECT_THROW(preservation_rate({1.0}, {-2.0}), NonPositiveSource);
}

TEST(PreservationDiscrepancy, SymmetricAbsoluteGap) {
    EXPECT_DOUBLE_EQ(preservation_discrepancy(0.5, 0.5), 0.0);
    EXPECT_DOUBLE_EQ(preservation_discrepancy(0.2, 0.9), preservation_discrepancy(0.9, 0.2));
    EXPECT_NEAR(preservation_discrepancy(0.7941, 0.8251), 0.0310, 1e-12);
}

TEST(EvaluateLoss, BuiltinMatchesForwardLoss) {
    TempDir tmp("bm-eval");
    const TaskPairFixture fx = generate_task_pair(2, {1.0, 32});
    write_checkpoint(fx.model_a, tmp.path("a.bt"));
    write_dataset(fx.data_a, tmp.path("va.bt"));
    Evaluator e;
    e.kind = Evaluator::Kind::Builtin;
    e.spec = fx.spec;
    const double via_eval = evaluate_loss(e, tmp.path("a.bt"), tmp.path("va.bt"));
    EXPECT_DOUBLE_EQ(via_eval, forward_loss(fx.spec, fx.model_a, fx.data_a));
}

TEST(EvaluateLoss, ExternalProtocolHappyPath) {
    TempDir tmp("bm-ext");
    const std::string script = tmp.path("ok.sh");
    {
        std::ofstream f(script);
        f << "#!/bin/sh\nprintf '{\"loss\": 0.625}'\n";
    }
    ::chmod(script.c_str(), 0755);
    Evaluator e;
    e.kind = Evaluator::Kind::External;
    e.command = script;
    EXPECT_DOUBLE_EQ(evaluate_loss(e, "model.bt", "data.bt"), 0.625);
}

TEST(EvaluateLoss, ExternalReceivesPathsAsArguments) {
    TempDir tmp("bm-extargs");
    const std::string script = tmp.path("echoargs.sh");
    const std::string capture = tmp.path("argv.txt");
    {
        std::ofstream f(script);
        f << "#!/bin/sh\necho \"$1 $2\" > " << capture << "\nprintf '{\"loss\": 1.0}'\n";
    }
    ::chmod(script.c_str(), 0755);
    Evaluator e;
    e.kind = Evaluator::Kind::External;
    e.command = script;
    evaluate_loss(e, "the model.bt", "the data.bt");
    std::ifstream f(capture);
    std::string line;
    std::getline(f, line);
    EXPECT_EQ(line, "the model.bt the data.bt");
}

TEST(EvaluateLoss, ExternalFailuresAreDiagnosed) {
    TempDir tmp("bm-extbad");
    auto make_script = [&](const std::string& name, const std::string& body) {
        const std::string path = tmp.path(name);
        std::ofstream f(path);
        f << "#!/bin/sh\n" << body;
        f.close();
        ::chmod(path.c_str(), 0755);
        return path;
    };
    Evaluator e;
    e.kind = Evaluator::Kind::External;

    e.command = make_script("exit1.sh", "printf '{\"loss\": 0.5}'\nexit 1\n");
    EXPECT_THROW(evaluate_loss(e, "m", "d"), EvaluatorFailure);

    e.command = make_script("garbage.sh", "printf 'not json'\n");
    EXPECT_THROW(evaluate_loss(e, "m", "d"), EvaluatorFailure);

    e.command = make_script("noloss.sh", "printf '{\"cost\": 0.5}'\n");
    EXPECT_THROW(evaluate_loss(e, "m", "d"), EvaluatorFailure);

    e.command = make_script("stringloss.sh", "printf '{\"loss\": \"low\"}'\n");
    EXPECT_THROW(evaluate_loss(e, "m", "d"), EvaluatorFailure);

    e.command = make_script("hugeloss.sh", "printf '{\"loss\": 1e999}'\n");
    EXPECT_THROW(evaluate_loss(e, "m", "d"), EvaluatorError);
}
