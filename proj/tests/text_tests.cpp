#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "datum/text/text.hpp"

using namespace datum;

TEST_CASE("tokenize pads to max length with padding at the tail") {
    Vocabulary v = Vocabulary::standard();
    std::vector<int> ids = v.tokenize("a photo of vstar car");
    REQUIRE(ids.size() == 8);
    for (int i = 0; i < 5; ++i) CHECK(ids[i] != v.pad_id());
    for (int i = 5; i < 8; ++i) CHECK(ids[i] == v.pad_id());
    CHECK(ids[3] == v.vstar_id());
}

TEST_CASE("detokenize round-trips content words") {
    Vocabulary v = Vocabulary::standard();
    for (const std::string s :
         {"a photo of vstar car", "a photo of a vstar urban scene", "pedestrian sign sky road"}) {
        CHECK(v.detokenize(v.tokenize(s)) == s);
    }
}

TEST_CASE("tokenizer is case-insensitive") {
    Vocabulary v = Vocabulary::standard();
    CHECK(v.tokenize("A Photo OF vstar CAR") == v.tokenize("a photo of vstar car"));
}

TEST_CASE("out of vocabulary word is named in the error") {
    Vocabulary v = Vocabulary::standard();
    try {
        v.tokenize("a photo of zebra");
        FAIL("expected an error");
    } catch (const OutOfVocabularyError& e) {
        CHECK(e.word == "zebra");
        CHECK(std::string(e.what()).find("zebra") != std::string::npos);
    }
}

TEST_CASE("phrase entries consume one slot") {
    Vocabulary v = Vocabulary::standard();
    std::vector<int> ids = v.tokenize(dashcam_prompt("car"));
    int content = 0;
    for (int id : ids) content += id != v.pad_id();
    CHECK(content == 7);  // a photo of a vstar car + one phrase token
    CHECK(v.token(ids[6]) == "seen from the dash cam");
    CHECK(v.detokenize(ids) == "a photo of a vstar car seen from the dash cam");
}

TEST_CASE("vocabulary stays within budget and serializes") {
    Vocabulary v = Vocabulary::standard();
    CHECK(v.size() <= 32);
    CHECK(v.max_len() == 8);
    CHECK(v.vstar_id() >= 0);
    CHECK(v.id("vstar") == v.vstar_id());
    CHECK(v.id("zebra") == -1);
    Vocabulary back = Vocabulary::from_json(v.to_json());
    CHECK(back.size() == v.size());
    CHECK(back.vstar_id() == v.vstar_id());
    CHECK(back.tokenize(training_prompt()) == v.tokenize(training_prompt()));
    CHECK_THROWS_AS(Vocabulary::from_json(nlohmann::json{"a", "b"}), Error);
}

TEST_CASE("prompt templates") {
    CHECK(training_prompt() == "a photo of a vstar urban scene");
    CHECK(inference_prompt("car") == "a photo of a vstar car");
    CHECK(inference_prompt("pedestrian") == "a photo of a vstar pedestrian");
    CHECK(inference_prompt("none") == "a photo of a vstar urban scene");
    CHECK(inference_prompt("") == "a photo of a vstar urban scene");
    CHECK(inference_prompt("sky", false) == "a photo of a vstar sky");
    CHECK_THROWS_AS(inference_prompt("sky"), Error);
    CHECK_THROWS_AS(inference_prompt("zebra"), Error);
    CHECK(dashcam_prompt("car") == "a photo of a vstar car seen from the dash cam");
    CHECK(prior_caption("none") == "a photo of an urban scene");
    CHECK(prior_caption("car") == "a photo of a car");
    CHECK_THROWS_AS(prior_caption("sky"), Error);

    Vocabulary v = Vocabulary::standard();
    int vstar_hits = 0;
    for (int id : v.tokenize(training_prompt())) vstar_hits += id == v.vstar_id();
    CHECK(vstar_hits == 1);
    // every template fits the token budget
    for (const std::string& cls : {"car", "pedestrian", "sign"}) {
        CHECK_NOTHROW(v.tokenize(inference_prompt(cls)));
        CHECK_NOTHROW(v.tokenize(dashcam_prompt(cls)));
        CHECK_NOTHROW(v.tokenize(prior_caption(cls)));
    }
}

TEST_CASE("all-pad input with a zeroed table encodes to zero") {
    Rng rng(1);
    TextEncoder<double> enc;
    enc.init(rng, Vocabulary::standard().size());
    enc.emb.table.setZero();
    std::vector<int> ids(8, 0);
    Mat<double> y = enc.forward(ids, 1);
    CHECK(y.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("swapping content tokens does not merely permute the encoding") {
    Rng rng(2);
    Vocabulary v = Vocabulary::standard();
    TextEncoder<double> enc;
    enc.init(rng, v.size());
    std::vector<int> a = v.tokenize("a photo of vstar car");
    std::vector<int> b = a;
    std::swap(b[0], b[1]);
    Mat<double> ya = enc.forward(a, 1);
    Mat<double> yb = enc.forward(b, 1);
    Mat<double> yb_swapped = yb;
    yb_swapped.col(0).swap(yb_swapped.col(1));
    CHECK((ya - yb).cwiseAbs().maxCoeff() > 1e-6);
    CHECK((ya - yb_swapped).cwiseAbs().maxCoeff() > 1e-6);
}

TEST_CASE("encoding is deterministic") {
    Rng rng(3);
    Vocabulary v = Vocabulary::standard();
    TextEncoder<double> enc;
    enc.init(rng, v.size());
    std::vector<int> ids = v.tokenize(training_prompt());
    Mat<double> y1 = enc.forward(ids, 1);
    Mat<double> y2 = enc.forward(ids, 1);
    CHECK((y1 - y2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encoder gradients match finite differences at ten points") {
    Vocabulary v = Vocabulary::standard();
    std::vector<int> ids = v.tokenize(training_prompt());
    std::vector<int> ids2 = v.tokenize(inference_prompt("car"));
    std::vector<int> batch_ids = ids;
    batch_ids.insert(batch_ids.end(), ids2.begin(), ids2.end());

    for (int point = 0; point < 10; ++point) {
        Rng rng(100 + static_cast<std::uint64_t>(point));
        TextEncoder<double> enc;
        enc.init(rng, v.size());
        Mat<double> probe = normal_matrix<double>(rng, kTextDim, 16, 1.0);

        ParamRegistry<double> reg;
        enc.reg(reg, "text");
        reg.zero_grad();
        enc.forward(batch_ids, 2);
        enc.backward(probe, 2);

        Rng pick(200 + static_cast<std::uint64_t>(point));
        for (int probe_i = 0; probe_i < 10; ++probe_i) {
            auto& p = reg.items[static_cast<std::size_t>(
                pick.uniform_int(0, static_cast<int>(reg.items.size()) - 1))];
            int idx = pick.uniform_int(0, static_cast<int>(p.value->size()) - 1);
            double keep = p.value->data()[idx];
            const double h = 1e-5;
            auto eval = [&] {
                TextEncoder<double> e2 = enc;
                return (e2.forward(batch_ids, 2).array() * probe.array()).sum();
            };
            p.value->data()[idx] = keep + h;
            double up = eval();
            p.value->data()[idx] = keep - h;
            double down = eval();
            p.value->data()[idx] = keep;
            double fd = (up - down) / (2 * h);
            double an = p.grad->data()[idx];
            double denom = std::max(std::abs(fd), std::abs(an));
            if (denom < 1e-6) continue;
            INFO(p.name << "[" << idx << "]");
            CHECK(std::abs(fd - an) / denom <= 1e-4);
        }
    }
}

TEST_CASE("vstar embedding has a live gradient path") {
    Rng rng(4);
    Vocabulary v = Vocabulary::standard();
    TextEncoder<double> enc;
    enc.init(rng, v.size());
    ParamRegistry<double> reg;
    enc.reg(reg, "text");
    reg.zero_grad();
    std::vector<int> ids = v.tokenize(training_prompt());
    Mat<double> y = enc.forward(ids, 1);
    enc.backward(Mat<double>::Ones(y.rows(), y.cols()), 1);
    CHECK(enc.emb.dtable.col(v.vstar_id()).cwiseAbs().maxCoeff() > 0.0);
}
