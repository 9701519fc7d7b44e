#include "doctest.h"

#include <cmath>

#include "fewshot/distill.hpp"
#include "fewshot/eval.hpp"
#include "test_util.hpp"

using namespace fewshot;

TEST_CASE("kd_loss is zero for identical logits") {
    std::mt19937_64 rng(8);
    for (double t : {0.5, 1.0, 40.0, 100.0}) {
        Matrix z(5, 7);
        for (auto& v : z.data) v = 6.0 * uniform01(rng) - 3.0;
        CHECK(kd_loss_value(z, z, t) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("kd_loss is zero when logits differ by a per-row constant") {
    Matrix teacher(2, 4);
    for (std::size_t c = 0; c < 4; ++c) {
        teacher.at(0, c) = 0.5 * static_cast<double>(c);
        teacher.at(1, c) = -0.3 * static_cast<double>(c);
    }
    Matrix student = teacher;
    for (std::size_t c = 0; c < 4; ++c) {
        student.at(0, c) += 3.0;
        student.at(1, c) -= 1.5;
    }
    CHECK(kd_loss_value(student, teacher, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("two-class closed-form oracle") {
    Matrix teacher(1, 2), student(1, 2);
    teacher.at(0, 0) = 2.0;
    teacher.at(0, 1) = 0.0;
    student.at(0, 0) = 0.0;
    student.at(0, 1) = 2.0;

    // Independent evaluation of sum p*log(p/q) over the two outcomes.
    const double p0 = std::exp(2.0) / (std::exp(2.0) + 1.0), p1 = 1.0 - p0;
    const double q0 = 1.0 / (1.0 + std::exp(2.0)), q1 = 1.0 - q0;
    const double expect = p0 * std::log(p0 / q0) + p1 * std::log(p1 / q1);

    CHECK(kd_loss_value(student, teacher, 1.0) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("kd_loss vanishes in the high-temperature limit") {
    Matrix teacher(3, 5), student(3, 5);
    std::mt19937_64 rng(11);
    for (auto& v : teacher.data) v = 10.0 * uniform01(rng) - 5.0;
    for (auto& v : student.data) v = 10.0 * uniform01(rng) - 5.0;
    CHECK(kd_loss_value(student, teacher, 1e6) < 1e-6);
}

TEST_CASE("temperature scaling preserves the argmax") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        Matrix z(1, 6);
        for (auto& v : z.data) v = 20.0 * uniform01(rng) - 10.0;
        const double t = 0.01 + 200.0 * uniform01(rng);
        Matrix zt = z;
        for (auto& v : zt.data) v /= t;
        Matrix p = softmax_rows(zt);
        std::size_t am_z = 0, am_p = 0;
        for (std::size_t c = 1; c < 6; ++c) {
            if (z.at(0, c) > z.at(0, am_z)) am_z = c;
            if (p.at(0, c) > p.at(0, am_p)) am_p = c;
        }
        REQUIRE(am_z == am_p);
    }
}

TEST_CASE("kd_loss rejects bad inputs") {
    Matrix a(1, 3, 0.0), b(1, 2, 0.0);
    CHECK_THROWS_AS(kd_loss(a, b, 1.0), ContractError);
    Matrix c(1, 3, 0.0);
    c.at(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(kd_loss(c, a, 1.0), ContractError);
    CHECK_THROWS_AS(kd_loss(a, a, 0.0), ContractError);
}

TEST_CASE("kd gradient matches finite differences on student logits") {
    std::mt19937_64 rng(30);
    Matrix teacher(2, 4), student(2, 4);
    for (auto& v : teacher.data) v = 4.0 * uniform01(rng) - 2.0;
    for (auto& v : student.data) v = 4.0 * uniform01(rng) - 2.0;
    const double t = 3.0;
    KdResult res = kd_loss(student, teacher, t);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < student.size(); i += 3) {
        Matrix up = student, down = student;
        up.data[i] += eps;
        down.data[i] -= eps;
        const double numeric = (kd_loss_value(up, teacher, t) - kd_loss_value(down, teacher, t)) /
                               (2.0 * eps);
        CHECK(res.dstudent_logits.data[i] == doctest::Approx(numeric).epsilon(1e-4));
    }
}

namespace {

struct ToySetup {
    Episode episode;
    ModelBundle base;
    TrainConfig cfg;
    JointObjectiveConfig obj;
};

ToySetup trained_base(testutil::TempDir& tmp) {
    ToySetup s;
    auto ds = testutil::synth_dataset(2, 4, 2);
    s.episode = sample_episode(ds, 2, 0);

    ToyBackbone::Config bc;
    bc.hidden_dim = 12;
    bc.vocab_size = 64;
    bc.init_seed = 5;
    s.base.backbone = std::make_unique<ToyBackbone>(bc);
    s.base.head = ClassifierHead(2, 12, 6);

    s.cfg.epochs = 60;
    s.cfg.batch_size = 4;
    s.cfg.lr_plm = 5e-3;
    s.cfg.lr_cls = 5e-2;
    s.cfg.seed = 1;
    train(s.episode, *s.base.backbone, s.base.head, s.obj, s.cfg, nullptr);
    save_checkpoint(tmp.path / "base", *s.base.backbone, s.base.head, "{}");
    return s;
}

}  // namespace

TEST_CASE("a generation's KL decreases from first to last epoch") {
    testutil::TempDir tmp;
    ToySetup s = trained_base(tmp);

    DistillationSchedule sched;
    sched.temperature = 2.0;
    sched.generations = 1;
    sched.per_generation_epochs = 40;
    sched.include_mlm = false;

    DistillResult dr = distill_sequence(s.base, tmp.path / "base", s.episode, sched, s.obj, s.cfg,
                                        nullptr, tmp.path / "ssd");
    REQUIRE(dr.records.size() == 1);
    const auto& trace = dr.records[0].kl_trace;
    CHECK(trace.back() < trace.front());
}

TEST_CASE("converged student matches teacher argmax on a 4-point set") {
    testutil::TempDir tmp;
    ToySetup s = trained_base(tmp);

    DistillationSchedule sched;
    sched.temperature = 1.0;
    sched.generations = 1;
    sched.per_generation_epochs = 150;
    sched.include_mlm = false;

    DistillResult dr = distill_sequence(s.base, tmp.path / "base", s.episode, sched, s.obj, s.cfg,
                                        nullptr, tmp.path / "ssd");
    std::vector<std::string> texts;
    for (const auto& u : s.episode.items) texts.push_back(u.text);
    REQUIRE(texts.size() == 4);

    Matrix tz = s.base.head.logits(s.base.backbone->encode(s.base.backbone->tokenize(texts)));
    Matrix sz = dr.final_model.head.logits(
        dr.final_model.backbone->encode(dr.final_model.backbone->tokenize(texts)));
    for (std::size_t r = 0; r < 4; ++r) {
        std::size_t ta = 0, sa = 0;
        for (std::size_t c = 1; c < tz.cols; ++c) {
            if (tz.at(r, c) > tz.at(r, ta)) ta = c;
            if (sz.at(r, c) > sz.at(r, sa)) sa = c;
        }
        CHECK(ta == sa);
    }
}

TEST_CASE("generation chain links teacher to previous student by checkpoint hash") {
    testutil::TempDir tmp;
    ToySetup s = trained_base(tmp);

    DistillationSchedule sched;
    sched.temperature = 2.0;
    sched.generations = 3;
    sched.per_generation_epochs = 5;
    sched.include_mlm = false;

    DistillResult dr = distill_sequence(s.base, tmp.path / "base", s.episode, sched, s.obj, s.cfg,
                                        nullptr, tmp.path / "ssd");
    REQUIRE(dr.records.size() == 3);
    CHECK(dr.records[0].teacher_hash == checkpoint_hash(tmp.path / "base"));
    for (std::size_t k = 1; k < 3; ++k) {
        CHECK(dr.records[k].teacher_hash == dr.records[k - 1].student_hash);
        CHECK(dr.records[k].teacher_checkpoint == dr.records[k - 1].student_checkpoint);
    }
}

TEST_CASE("zero generations are rejected") {
    DistillationSchedule sched;
    sched.generations = 0;
    CHECK_THROWS_AS(sched.validate(), ContractError);
}

TEST_CASE("teacher/student label-space mismatch is a contract error") {
    testutil::TempDir tmp;
    ToySetup s = trained_base(tmp);
    ModelBundle student;
    student.backbone = s.base.backbone->clone_fresh(1);
    student.head = ClassifierHead(5, s.base.backbone->hidden_dim(), 1);  // wrong L
    DistillationSchedule sched;
    CHECK_THROWS_AS(run_generation(s.base, tmp.path / "base", student, s.episode, sched, s.obj,
                                   s.cfg, nullptr, tmp.path / "out"),
                    ContractError);
}
