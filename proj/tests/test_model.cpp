// Model assembly: heading prepend/drop, patch flipping, block algebra with
// zeroed weights, forward shapes, the classification head, parameter budgets
// and the checkpoint container.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cim/checkpoint.hpp"
#include "cim/model.hpp"
#include "helpers.hpp"

using namespace cim;
using test_util::tensor;

namespace {

// d-wide random canonical sequence of n patches plus cls.
TokenSeq random_seq(int64_t n, int64_t d, uint64_t seed) {
    SplitRng rng(seed);
    return {Tensor::uniform({n + 1, d}, rng, -1, 1), patch_cls_roles(n)};
}

void zero_all(ModelParams<float>& p) {
    for (auto& [name, t] : p.named)
        for (float& v : t.values()) v = 0.0f;
}

std::filesystem::path temp_file(const std::string& stem) {
    return std::filesystem::temp_directory_path() / stem;
}

}  // namespace

TEST_CASE("average heading of two patches and a cls token is their joint mean") {
    ModelConfig cfg;
    cfg.heading = Heading::average;
    Graph g;
    TokenSeq seq{tensor<float>({3, 1}, {1, 2, 3}), patch_cls_roles(2)};
    auto out = prepend_heading(g, seq, cfg, {});
    REQUIRE(out.len() == 4);
    CHECK(out.role_str() == "appc");
    CHECK(out.data.at({0, 0}) == 2.0f);  // mean over patches and cls alike
    CHECK(out.data.at({1, 0}) == 1.0f);
    CHECK(out.data.at({3, 0}) == 3.0f);
}

TEST_CASE("heading mode off returns the sequence untouched") {
    ModelConfig cfg;
    cfg.heading = Heading::off;
    Graph g;
    auto seq = random_seq(4, 8, 1);
    auto out = prepend_heading(g, seq, cfg, {});
    CHECK(out.data.same_as(seq.data));
    CHECK(out.role_str() == seq.role_str());
}

TEST_CASE("grid heading tokens equal brute-force means over their spatial cells") {
    ModelConfig cfg;
    cfg.heading = Heading::grid;
    cfg.grid_n = 4;
    cfg.image = 224;
    cfg.patch = 16;  // 14x14 patch grid, 7x7 cells
    const int64_t side = 14, cell = 7, d = 4;
    auto seq = random_seq(side * side, d, 2);
    Graph g;
    auto out = prepend_heading(g, seq, cfg, {});
    REQUIRE(out.len() == side * side + 1 + 4);
    CHECK(out.count(Role::avg) == 4);
    for (int64_t ci = 0; ci < 2; ++ci)
        for (int64_t cj = 0; cj < 2; ++cj) {
            std::vector<double> mean(d, 0.0);
            for (int64_t py = ci * cell; py < (ci + 1) * cell; ++py)
                for (int64_t px = cj * cell; px < (cj + 1) * cell; ++px)
                    for (int64_t k = 0; k < d; ++k)
                        mean[size_t(k)] += double(seq.data.at({py * side + px, k}));
            double worst = 0;
            for (int64_t k = 0; k < d; ++k) {
                mean[size_t(k)] /= double(cell * cell);
                worst = std::max(worst, std::abs(double(out.data.at({ci * 2 + cj, k})) -
                                                 mean[size_t(k)]));
            }
            CHECK(worst <= 1e-6);
        }
}

TEST_CASE("grid heading rejects a grid that does not divide the patch layout") {
    ModelConfig cfg;
    cfg.heading = Heading::grid;
    cfg.grid_n = 9;
    cfg.image = 224;
    cfg.patch = 16;  // 14 is not divisible by 3
    Graph g;
    auto seq = random_seq(196, 4, 3);
    CHECK_THROWS_AS(prepend_heading(g, seq, cfg, {}), ConfigError);
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("duplicate-cls heading copies the current cls activation") {
    ModelConfig cfg;
    cfg.heading = Heading::duplicate_cls;
    Graph g;
    auto seq = random_seq(4, 6, 4);
    auto out = prepend_heading(g, seq, cfg, {});
    for (int64_t k = 0; k < 6; ++k) CHECK(out.data.at({0, k}) == seq.data.at({4, k}));
}

TEST_CASE("learnable heading prepends the trained token and requires one") {
    ModelConfig cfg;
    cfg.heading = Heading::learnable;
    Graph g;
    auto seq = random_seq(4, 6, 5);
    CHECK_THROWS_AS(prepend_heading(g, seq, cfg, {}), ContractError);
    SplitRng rng(6);
    auto tok = Tensor::uniform({1, 6}, rng, -1, 1);
    auto out = prepend_heading(g, seq, cfg, tok);
    for (int64_t k = 0; k < 6; ++k) CHECK(out.data.at({0, k}) == tok.at({0, k}));
}

TEST_CASE("prepending then dropping the heading restores the sequence bitwise") {
    ModelConfig cfg;
    cfg.heading = Heading::grid;
    cfg.grid_n = 9;
    cfg.image = 24;
    cfg.patch = 4;  // 6x6 patch grid divides into 9 cells
    Graph g;
    auto seq = random_seq(36, 8, 7);
    auto up = prepend_heading(g, seq, cfg, {});
    CHECK(up.count(Role::avg) == 9);
    auto down = drop_heading(g, up);
    CHECK(down.len() == seq.len());
    CHECK(down.role_str() == seq.role_str());
    CHECK(test_util::max_abs_gap(down.data.values(), seq.data.values()) == 0.0);
    // dropping without a heading present is a no-op
    auto same = drop_heading(g, seq);
    CHECK(same.data.same_as(seq.data));
}

TEST_CASE("flip reverses patches, keeps cls last, and is an involution") {
    Graph g;
    TokenSeq seq{tensor<float>({4, 2}, {1, 1, 2, 2, 3, 3, 9, 9}), patch_cls_roles(3)};
    auto flipped = flip_patches(g, seq);
    CHECK(flipped.role_str() == "pppc");
    CHECK(flipped.data.at({0, 0}) == 3.0f);
    CHECK(flipped.data.at({1, 0}) == 2.0f);
    CHECK(flipped.data.at({2, 0}) == 1.0f);
    CHECK(flipped.data.at({3, 0}) == 9.0f);  // cls pinned to the end
    auto back = flip_patches(g, flipped);
    CHECK(test_util::max_abs_gap(back.data.values(), seq.data.values()) == 0.0);
}

TEST_CASE("flip refuses sequences that still carry a heading prefix") {
    ModelConfig cfg;
    cfg.heading = Heading::average;
    Graph g;
    auto up = prepend_heading(g, random_seq(4, 4, 8), cfg, {});
    CHECK_THROWS_AS(flip_patches(g, up), ContractError);
}

TEST_CASE("a zero-weight block is the identity when heading, flip and norm are off") {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.dim = 16;
    cfg.patch = 4;
    cfg.image = 16;
    cfg.heading = Heading::off;
    cfg.flip = FlipMode::off;
    cfg.norm = NormKind::none;
    cfg.num_classes = 2;
    cfg.d_state = 8;
    cfg.head_dim = 8;
    cfg.validate();
    auto params = init_params<float>(cfg, 0);
    zero_all(params);
    Graph g;
    auto seq = random_seq(cfg.n_patches(), cfg.dim, 9);
    auto out = adventurer_block(g, seq, params, 0, {});
    CHECK(out.role_str() == seq.role_str());
    CHECK(test_util::max_abs_gap(out.data.values(), seq.data.values()) == 0.0);
}

TEST_CASE("inter-layer flipping reverses once per block and cancels over two") {
    ModelConfig cfg;
    cfg.depth = 2;
    cfg.dim = 16;
    cfg.patch = 4;
    cfg.image = 16;
    cfg.heading = Heading::off;
    cfg.flip = FlipMode::inter_layer;
    cfg.norm = NormKind::none;
    cfg.num_classes = 2;
    cfg.d_state = 8;
    cfg.head_dim = 8;
    cfg.validate();
    auto params = init_params<float>(cfg, 0);
    zero_all(params);
    Graph g;
    auto seq = random_seq(cfg.n_patches(), cfg.dim, 10);
    auto once = adventurer_block(g, seq, params, 0, {});
    const int64_t n = cfg.n_patches();
    for (int64_t i = 0; i < n; ++i)
        CHECK(once.data.at({i, 0}) == seq.data.at({n - 1 - i, 0}));  // exactly one reversal
    auto twice = adventurer_block(g, once, params, 1, {});
    CHECK(test_util::max_abs_gap(twice.data.values(), seq.data.values()) == 0.0);
}

TEST_CASE("per-layer bidirectional scanning suppresses the inter-layer flip") {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.dim = 16;
    cfg.patch = 4;
    cfg.image = 16;
    cfg.heading = Heading::off;
    cfg.flip = FlipMode::inter_layer;
    cfg.scan = ScanMode::per_layer_bidirectional;
    cfg.norm = NormKind::none;
    cfg.num_classes = 2;
    cfg.d_state = 8;
    cfg.head_dim = 8;
    cfg.validate();
    auto params = init_params<float>(cfg, 0);
    zero_all(params);
    Graph g;
    auto seq = random_seq(cfg.n_patches(), cfg.dim, 11);
    auto out = adventurer_block(g, seq, params, 0, {});
    CHECK(test_util::max_abs_gap(out.data.values(), seq.data.values()) == 0.0);
}

TEST_CASE("the heading activation entering the mixer is the mean of the block's inputs") {
    ModelConfig cfg = preset_config("micro");
    cfg.validate();
    auto params = init_params<float>(cfg, 3);
    SplitRng rng(12);
    auto image = Tensor::uniform({3, cfg.image, cfg.image}, rng, -1, 1);
    Graph g;
    BlockTrace<float> trace;
    forward_features(g, image, params, {}, &trace);
    REQUIRE(trace.heading_rows.size() == size_t(cfg.depth));
    REQUIRE(trace.boundary.size() == size_t(cfg.depth) + 1);
    for (size_t b = 0; b < trace.heading_rows.size(); ++b) {
        const auto& in = trace.boundary[b];
        const int64_t rows = in.shape()[0], d = in.shape()[1];
        double worst = 0;
        for (int64_t k = 0; k < d; ++k) {
            double m = 0;
            for (int64_t i = 0; i < rows; ++i) m += double(in.at({i, k}));
            m /= double(rows);
            worst = std::max(worst, std::abs(double(trace.heading_rows[b].at({0, k})) - m));
        }
        CHECK(worst <= 1e-6);
        CHECK(trace.boundary_roles[b] == std::string(size_t(cfg.n_patches()), 'p') + "c");
    }
}

TEST_CASE("with recalculation off every block reuses the frozen layer-0 heading") {
    ModelConfig cfg = preset_config("micro");
    cfg.recalc_heading = false;
    cfg.validate();
    auto params = init_params<float>(cfg, 4);
    SplitRng rng(13);
    auto image = Tensor::uniform({3, cfg.image, cfg.image}, rng, -1, 1);
    Graph g;
    BlockTrace<float> trace;
    forward_features(g, image, params, {}, &trace);
    REQUIRE(trace.heading_rows.size() == size_t(cfg.depth));
    for (size_t b = 1; b < trace.heading_rows.size(); ++b)
        CHECK(trace.heading_rows[b].same_as(trace.heading_rows[0]));
    // boundaries still evolve, so the reuse is not an artifact of a frozen input
    CHECK(test_util::max_abs_gap(trace.boundary[1].values(), trace.boundary[0].values()) > 0.0);
}

TEST_CASE("the tiny preset maps a 224px image to a 197 by 256 feature sequence") {
    ModelConfig cfg = preset_config("tiny");
    auto params = init_params<float>(cfg, 0);
    SplitRng rng(14);
    auto image = Tensor::uniform({3, 224, 224}, rng, -1, 1);
    Graph g;
    g.recording = false;
    auto feats = forward_features(g, image, params);
    CHECK(feats.data.shape() == Shape{197, 256});
    CHECK(feats.role_str() == std::string(196, 'p') + "c");
    CHECK(feats.data.all_finite());
}

TEST_CASE("swapping two input patches changes the classification logits") {
    ModelConfig cfg = preset_config("micro");
    auto params = init_params<float>(cfg, 5);
    SplitRng rng(15);
    auto image = Tensor::uniform({3, cfg.image, cfg.image}, rng, -1, 1);
    std::vector<float> swapped(image.values().begin(), image.values().end());
    // exchange the top-left and next patch blocks in every channel
    const int64_t s = cfg.image, p = cfg.patch;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < p; ++y)
            for (int64_t x = 0; x < p; ++x)
                std::swap(swapped[size_t((c * s + y) * s + x)],
                          swapped[size_t((c * s + y) * s + p + x)]);
    Graph g1, g2;
    g1.recording = g2.recording = false;
    auto la = classify(g1, image, params);
    auto lb = classify(g2, tensor<float>({3, s, s}, swapped), params);
    CHECK(test_util::max_abs_gap(la.values(), lb.values()) > 1e-6);
}

TEST_CASE("with a zero head the logits equal the bias, and softmax normalizes") {
    ModelConfig cfg = preset_config("micro");
    auto params = init_params<float>(cfg, 6);
    for (float& v : params.find("head.weight").values()) v = 0.0f;
    auto& bias = params.find("head.bias");
    bias.values()[0] = 0.3f;
    bias.values()[1] = -0.2f;
    SplitRng rng(16);
    auto image = Tensor::uniform({3, cfg.image, cfg.image}, rng, -1, 1);
    Graph g;
    g.recording = false;
    auto logits = classify(g, image, params);
    CHECK(logits.at({0}) == 0.3f);
    CHECK(logits.at({1}) == -0.2f);
    double z = std::exp(0.3) + std::exp(-0.2);
    CHECK(std::exp(0.3) / z + std::exp(-0.2) / z == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("parameter counts sit within ten percent of the published budgets") {
    for (const auto& [name, budget] :
         std::vector<std::pair<std::string, double>>{{"tiny", 12e6}, {"small", 44e6},
                                                     {"base", 99e6}, {"large", 346e6}}) {
        CAPTURE(name);
        CHECK(preset_param_budget(name) == budget);
        const double count = double(count_params(preset_config(name)));
        CHECK(std::abs(count - budget) / budget <= 0.10);
    }
    CHECK(preset_param_budget("micro") == 0.0);  // no published reference at this scale
}

TEST_CASE("parameter specs are unique, consistent with the count, and wired into the model") {
    ModelConfig cfg = preset_config("micro");
    auto specs = param_specs(cfg);
    std::set<std::string> names;
    int64_t total = 0;
    for (const auto& s : specs) {
        CHECK(names.insert(s.name).second);
        total += s.shape.numel();
    }
    CHECK(total == count_params(cfg));
    auto params = init_params<float>(cfg, 0);
    CHECK(params.named.size() == specs.size());
    CHECK(params.find("pos_embed").shape() == Shape{cfg.n_patches() + 1, cfg.dim});
    CHECK(params.blocks[0].ssd.in_w.same_as(params.find("block0.mixer.in_w")));
    CHECK_THROWS_AS(params.find("does.not.exist"), Error);
}

TEST_CASE("checkpoints round-trip bitwise and reject corruption distinctly") {
    ModelConfig cfg = preset_config("micro");
    cfg.depth = 2;
    cfg.validate();
    auto params = init_params<float>(cfg, 77);
    const auto path = temp_file("cim_test_roundtrip.ckpt");
    save_checkpoint(params, 77, path.string());

    auto loaded = load_checkpoint<float>(path.string());
    CHECK(loaded.seed == 77);
    REQUIRE(loaded.params.named.size() == params.named.size());
    for (size_t i = 0; i < params.named.size(); ++i) {
        CHECK(loaded.params.named[i].first == params.named[i].first);
        CHECK(test_util::max_abs_gap(loaded.params.named[i].second.values(),
                                     params.named[i].second.values()) == 0.0);
    }

    // saving the loaded params reproduces the file byte for byte
    const auto path2 = temp_file("cim_test_roundtrip2.ckpt");
    save_checkpoint(loaded.params, loaded.seed, path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    CHECK(!b1.empty());

    // corrupted magic
    const auto bad_magic = temp_file("cim_test_badmagic.ckpt");
    std::string corrupted = b1;
    corrupted[0] = 'X';
    std::ofstream(bad_magic, std::ios::binary) << corrupted;
    CHECK_THROWS_AS(load_checkpoint<float>(bad_magic.string()), FormatError);

    // truncated payload
    const auto truncated = temp_file("cim_test_truncated.ckpt");
    std::ofstream(truncated, std::ios::binary) << b1.substr(0, b1.size() / 2);
    CHECK_THROWS_AS(load_checkpoint<float>(truncated.string()), FormatError);

    // depth edited in the embedded config: tensor table no longer matches
    const auto edited = temp_file("cim_test_depthedit.ckpt");
    std::string tampered = b1;
    const auto at = tampered.find("depth=2");
    REQUIRE(at != std::string::npos);
    tampered[at + 6] = '1';
    std::ofstream(edited, std::ios::binary) << tampered;
    CHECK_THROWS_AS(load_checkpoint<float>(edited.string()), ShapeMismatchError);

    // missing file
    CHECK_THROWS_AS(load_checkpoint<float>(temp_file("cim_test_missing.ckpt").string()), IoError);

    for (const auto& p : {path, path2, bad_magic, truncated, edited}) std::filesystem::remove(p);
}
