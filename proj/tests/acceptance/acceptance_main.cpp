// Acceptance suite: one pass/fail line per criterion, exit 0 only if all
// pass.  Tolerances and budgets are pinned in code next to each check.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cardseg/cardseg.hpp"
#include "../oracles.hpp"

using namespace cardseg;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::duration<double>>(Clock::now() - t0).count();
}

struct Criterion {
    int id;
    const char* name;
    bool passed;
    double seconds;
    std::string detail;
};

std::vector<Criterion> g_results;

void record(int id, const char* name, bool passed, double secs, const std::string& detail) {
    g_results.push_back({id, name, passed, secs, detail});
    std::printf("[%s] criterion %d: %-28s (%6.1fs) %s\n", passed ? "PASS" : "FAIL", id, name,
                secs, detail.c_str());
    std::fflush(stdout);
}

Geometry unit_geom(Dims3 dims) { return {dims, {1, 1, 1}, {0, 0, 0}}; }

Dims3 random_dims(Rng& rng, std::int64_t lo = 2, std::int64_t hi = 12) {
    auto pick = [&] { return lo + static_cast<std::int64_t>(rng.below(hi - lo + 1)); };
    return {pick(), pick(), pick()};
}

// ---------------------------------------------------------------------------
// 1. oracle equivalence
// ---------------------------------------------------------------------------

void criterion_1() {
    const auto t0 = Clock::now();
    Rng rng(20240901);
    const int kInstances = 500;
    std::int64_t mismatches = 0;
    std::string first_bad;

    auto fail = [&](const std::string& what) {
        ++mismatches;
        if (first_bad.empty()) first_bad = what;
    };

    for (int i = 0; i < kInstances; ++i) {
        // dilate
        {
            const auto dims = random_dims(rng);
            const auto m = oracle::random_mask(rng, dims, 0.25);
            const auto conn = static_cast<Connectivity>(rng.below(3));
            const int iters = 1 + static_cast<int>(rng.below(2));
            if (!(dilate(m, conn, iters) == oracle::dilate(m, conn, iters))) fail("dilate");
        }
        // connected components (as a partition)
        {
            const auto dims = random_dims(rng);
            const auto m = oracle::random_mask(rng, dims, 0.35);
            const auto conn = static_cast<Connectivity>(rng.below(3));
            const auto cc = connected_components(m, conn);
            const auto want = oracle::component_partition(m, conn);
            std::map<std::int32_t, std::int64_t> first;
            bool ok = true;
            for (std::int64_t l = 0; l < static_cast<std::int64_t>(m.size()); ++l) {
                const auto c = cc.component[static_cast<std::size_t>(l)];
                if (c > 0 && !first.count(c)) first[c] = l;
                const std::int64_t rep = c > 0 ? first[c] : -1;
                if (rep != want[static_cast<std::size_t>(l)]) ok = false;
            }
            if (!ok) fail("connected_components");
        }
        // extract_pav
        {
            const auto dims = random_dims(rng);
            const auto lab = oracle::random_labels(rng, dims, LabelSchema::seven(), 0.6);
            const auto conn = static_cast<Connectivity>(rng.below(3));
            const auto want = oracle::adjacency_band(lab, lab.schema().id_of("RV"),
                                                     lab.schema().id_of("PA"), conn);
            if (!(extract_pav(lab, conn) == want)) fail("extract_pav");
        }
        // dice
        {
            const auto dims = random_dims(rng);
            const auto a = oracle::random_labels(rng, dims, LabelSchema::six());
            const auto b = oracle::random_labels(rng, dims, LabelSchema::six());
            const auto id = static_cast<LabelId>(1 + rng.below(6));
            if (std::abs(dice(a, b, id) - oracle::dice(a, b, id)) > 1e-12) fail("dice");
        }
        // argmax_decode
        {
            const auto dims = random_dims(rng);
            const auto c = static_cast<std::int64_t>(2 + rng.below(6));
            const auto grid = oracle::random_grid<double>(rng, 1, c, dims);
            const auto got = argmax_decode(grid, LabelSchema::ten(), unit_geom(dims));
            if (got.data() != oracle::argmax_scan(grid)) fail("argmax_decode");
        }
        // nearest-neighbor label resampling
        {
            const auto dims = random_dims(rng, 2, 9);
            const auto lab = oracle::random_labels(rng, dims, LabelSchema::six());
            const double t = 0.4 + rng.uniform() * 2.1;
            if (resample_isotropic(lab, t).data() != oracle::resample_nn(lab, t))
                fail("resample_nn");
        }
        // conv3d (64-bit, <= 1e-12 relative)
        {
            const auto dims = random_dims(rng, 2, 6);
            const auto ci = static_cast<std::int64_t>(1 + rng.below(3));
            const auto co = static_cast<std::int64_t>(1 + rng.below(3));
            const auto in = oracle::random_grid<double>(rng, 1, ci, dims);
            Tensor<double> k("", {co, ci, 3, 3, 3});
            Tensor<double> b("", {co});
            oracle::randomize(rng, k);
            oracle::randomize(rng, b);
            const auto got = conv3d(in, k, b);
            const auto want = oracle::conv3d(in, k, b);
            for (std::size_t j = 0; j < got.data().size(); ++j) {
                const double scale =
                    std::max({std::abs(got.data()[j]), std::abs(want.data()[j]), 1.0});
                if (std::abs(got.data()[j] - want.data()[j]) > 1e-12 * scale) {
                    fail("conv3d");
                    break;
                }
            }
        }
    }

    const double secs = seconds_since(t0);
    std::ostringstream detail;
    detail << kInstances << " instances per op, " << mismatches << " mismatches";
    if (!first_bad.empty()) detail << " (first: " << first_bad << ")";
    record(1, "oracle equivalence", mismatches == 0 && secs < 120.0, secs, detail.str());
}

// ---------------------------------------------------------------------------
// 2. gradient verification
// ---------------------------------------------------------------------------

void criterion_2() {
    const auto t0 = Clock::now();
    Rng rng(777);
    double worst_layer = 0.0, worst_e2e = 0.0;

    // per-layer checks at 3^3, every parameter and input entry
    {
        auto in = oracle::random_grid<double>(rng, 1, 2, {3, 3, 3});
        Tensor<double> k("", {2, 2, 3, 3, 3});
        Tensor<double> b("", {2});
        oracle::randomize(rng, k, 0.5);
        oracle::randomize(rng, b, 0.5);
        auto gout = oracle::random_grid<double>(rng, 1, 2, {3, 3, 3});
        auto obj = [&] {
            const auto out = conv3d(in, k, b);
            double s = 0;
            for (std::size_t i = 0; i < out.data().size(); ++i) s += out.data()[i] * gout.data()[i];
            return s;
        };
        const auto g = conv3d_backward(in, k, gout);
        for (std::size_t i = 0; i < in.data().size(); ++i)
            worst_layer = std::max(worst_layer,
                                   oracle::rel_error(g.input.data()[i],
                                                     oracle::central_difference(obj, in.data()[i])));
        for (std::size_t i = 0; i < k.data.size(); ++i)
            worst_layer = std::max(
                worst_layer,
                oracle::rel_error(g.kernel.data[i], oracle::central_difference(obj, k.data[i])));
        for (std::size_t i = 0; i < b.data.size(); ++i)
            worst_layer = std::max(
                worst_layer,
                oracle::rel_error(g.bias.data[i], oracle::central_difference(obj, b.data[i])));
    }
    {
        auto in = oracle::random_grid<double>(rng, 1, 2, {2, 2, 4});
        Tensor<double> k("", {2, 3, 2, 2, 2});
        Tensor<double> b("", {3});
        oracle::randomize(rng, k, 0.5);
        oracle::randomize(rng, b, 0.5);
        auto gout = oracle::random_grid<double>(rng, 1, 3, {4, 4, 8});
        auto obj = [&] {
            const auto out = deconv3d(in, k, b);
            double s = 0;
            for (std::size_t i = 0; i < out.data().size(); ++i) s += out.data()[i] * gout.data()[i];
            return s;
        };
        const auto g = deconv3d_backward(in, k, gout);
        for (std::size_t i = 0; i < in.data().size(); ++i)
            worst_layer = std::max(worst_layer,
                                   oracle::rel_error(g.input.data()[i],
                                                     oracle::central_difference(obj, in.data()[i])));
        for (std::size_t i = 0; i < k.data.size(); ++i)
            worst_layer = std::max(
                worst_layer,
                oracle::rel_error(g.kernel.data[i], oracle::central_difference(obj, k.data[i])));
        for (std::size_t i = 0; i < b.data.size(); ++i)
            worst_layer = std::max(
                worst_layer,
                oracle::rel_error(g.bias.data[i], oracle::central_difference(obj, b.data[i])));
    }
    {
        auto in = oracle::random_grid<double>(rng, 1, 2, {4, 4, 4});
        auto gout = oracle::random_grid<double>(rng, 1, 2, {2, 2, 2});
        auto obj = [&] {
            const auto out = maxpool3d(in).output;
            double s = 0;
            for (std::size_t i = 0; i < out.data().size(); ++i) s += out.data()[i] * gout.data()[i];
            return s;
        };
        const auto res = maxpool3d(in);
        const auto gin = maxpool3d_backward(res, {4, 4, 4}, gout);
        for (std::size_t i = 0; i < in.data().size(); ++i)
            worst_layer = std::max(worst_layer,
                                   oracle::rel_error(gin.data()[i],
                                                     oracle::central_difference(obj, in.data()[i])));
    }
    {
        LabelVolume target(unit_geom({3, 3, 3}), LabelSchema::six());
        for (auto& v : target.data()) v = static_cast<LabelId>(rng.below(4));
        auto logits = oracle::random_grid<double>(rng, 1, 4, {3, 3, 3});
        auto obj = [&] {
            return static_cast<double>(softmax_cross_entropy(logits, target).loss);
        };
        const auto res = softmax_cross_entropy(logits, target);
        for (std::size_t i = 0; i < logits.data().size(); ++i)
            worst_layer = std::max(
                worst_layer, oracle::rel_error(res.grad.data()[i],
                                               oracle::central_difference(obj, logits.data()[i])));
    }

    // end-to-end: width_scale 1/8 on an 8^3 input against central differences
    {
        UNet<double> net(UNetConfig{1, 3, {1, 8}});
        net.init_weights(7);
        FeatureGrid<double> in(1, 1, {8, 8, 8});
        for (auto& v : in.data()) v = rng.normal();
        LabelVolume target(unit_geom({8, 8, 8}), LabelSchema::six());
        for (auto& v : target.data()) v = static_cast<LabelId>(rng.below(3));
        auto loss_of = [&] {
            return static_cast<double>(softmax_cross_entropy(net.forward(in), target).loss);
        };
        typename UNet<double>::Trace trace;
        const auto lr = softmax_cross_entropy(net.forward(in, &trace), target);
        FeatureGrid<double> gin;
        const auto grads = net.backward(trace, lr.grad, &gin);
        Rng pick(13);
        for (std::size_t ti = 0; ti < grads.tensors().size(); ++ti) {
            auto& w = net.weights().tensors()[ti];
            for (int s = 0; s < 8; ++s) {
                const auto i = static_cast<std::size_t>(pick.below(w.data.size()));
                const double fd = oracle::central_difference(loss_of, w.data[i]);
                worst_e2e = std::max(worst_e2e,
                                     oracle::rel_error(grads.tensors()[ti].data[i], fd));
            }
        }
        for (int s = 0; s < 16; ++s) {
            const auto i = static_cast<std::size_t>(pick.below(in.data().size()));
            const double fd = oracle::central_difference(loss_of, in.data()[i]);
            worst_e2e = std::max(worst_e2e, oracle::rel_error(gin.data()[i], fd));
        }
    }

    const double secs = seconds_since(t0);
    std::ostringstream detail;
    detail << "per-layer max rel err " << worst_layer << " (<1e-6), end-to-end " << worst_e2e
           << " (<1e-4)";
    record(2, "gradient verification", worst_layer < 1e-6 && worst_e2e < 1e-4 && secs < 300.0,
           secs, detail.str());
}

// ---------------------------------------------------------------------------
// 3. architecture fidelity
// ---------------------------------------------------------------------------

std::int64_t available_memory_bytes() {
    std::ifstream f("/proc/meminfo");
    std::string key;
    std::int64_t kb = 0;
    while (f >> key >> kb) {
        if (key == "MemAvailable:") return kb * 1024;
        std::string unit;
        std::getline(f, unit);
    }
    return 0;
}

void criterion_3() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::ostringstream detail;

    // independent layer walk over the published widths (in=1, N=7)
    const int N = 7;
    struct W {
        bool deconv;
        int ci, co;
    };
    const std::vector<W> walk{
        {false, 1, 16},        {false, 16, 32},  {false, 32, 32},  {false, 32, 64},
        {false, 64, 64},       {false, 64, 128}, {false, 128, 128}, {false, 128, 256},
        {true, 256, 128},      {false, 256, 128}, {true, 128, 64},  {false, 128, 64},
        {true, 64, 32},        {false, 64, N}};
    std::int64_t want_params = 0;
    for (const auto& w : walk)
        want_params += static_cast<std::int64_t>(w.co) * (w.deconv ? 8 : 27) * w.ci + w.co;

    const UNetConfig cfg{1, N, {1, 1}};
    UNet<float> net(cfg);
    if (want_params != 3219303) ok = false;  // frozen before the build
    if (cfg.parameter_count() != want_params) ok = false;
    if (net.weights().parameter_count() != want_params) ok = false;

    // every tensor shape must match the walk
    const auto layers = cfg.layer_walk();
    if (layers.size() != walk.size()) ok = false;
    for (std::size_t i = 0; i < layers.size() && ok; ++i) {
        const auto& spec = walk[i];
        const auto& l = layers[i];
        if (l.ci != spec.ci || l.co != spec.co ||
            (l.kind == UNetConfig::LayerSpec::DECONV) != spec.deconv)
            ok = false;
        const auto& kt = net.weights().get(l.name + ".kernel");
        const std::vector<std::int64_t> want_shape =
            spec.deconv ? std::vector<std::int64_t>{spec.ci, spec.co, 2, 2, 2}
                        : std::vector<std::int64_t>{spec.co, spec.ci, 3, 3, 3};
        if (kt.shape != want_shape) ok = false;
    }
    detail << "params " << net.weights().parameter_count() << " (walk " << want_params << ")";

    // full-width forward, shape only; published size memory permitting
    const std::int64_t avail = available_memory_bytes();
    const Dims3 dims = (avail > 6LL * 1024 * 1024 * 1024) ? Dims3{128, 192, 192}
                                                          : Dims3{64, 96, 96};
    net.init_weights(3);
    FeatureGrid<float> in(1, 1, dims);
    Rng rng(33);
    for (auto& v : in.data()) v = static_cast<float>(rng.normal());
    const auto out = net.forward(in);
    if (!(out.spatial() == dims) || out.channels() != N || out.batch() != 1) ok = false;
    detail << "; forward " << dims.str() << " -> " << out.channels() << "x"
           << out.spatial().str();

    record(3, "architecture fidelity", ok, seconds_since(t0), detail.str());
}

// ---------------------------------------------------------------------------
// 4. desk-scale learning
// ---------------------------------------------------------------------------

struct PreparedSet {
    std::vector<PreparedCase> cases;
};

PreparedSet prepare_phantoms(std::uint64_t seed0, int count, Dims3 target) {
    PreparedSet set;
    for (int i = 0; i < count; ++i) {
        const auto pc = generate_phantom(PhantomParams::compact(seed0 + static_cast<unsigned>(i)));
        auto prep = preprocess_case(pc.intensity, pc.labels, target);
        PreparedCase p;
        p.case_id = "phantom" + std::to_string(seed0 + static_cast<unsigned>(i));
        p.intensity = std::move(prep.intensity);
        p.gt = derive_ground_truth_from_ten(prep.labels);
        set.cases.push_back(std::move(p));
    }
    return set;
}

// trained unet1_no_pa kept for criterion 8
static std::optional<StageModel<float>> g_unet1_no_pa;
static std::optional<PreparedSet> g_train_set;

void criterion_4() {
    const auto t0 = Clock::now();
    const Dims3 dims{32, 48, 48};
    auto set = prepare_phantoms(9000, 4, dims);

    TrainHyperparams hp;
    hp.lr = 1e-3;
    hp.steps = 400;  // <= 500 per the budget
    hp.batch = 1;
    hp.seed = 11;
    auto res = train_stage<float>(Stage::UNET1_NO_PA, set.cases, {1, 4}, hp, {16, 24, 24}, 0.0,
                                  /*holdout_splits=*/false);

    const double initial = res.loss_history.front();
    const double final_loss = res.loss_history.back();

    // mean Dice over the six foreground labels on the training set
    double dice_sum = 0;
    int dice_n = 0;
    for (const auto& pc : set.cases) {
        const auto sample = make_training_sample<float>(Stage::UNET1_NO_PA, pc);
        const auto logits = res.model.net.forward(sample.input);
        const auto pred = argmax_decode(logits, LabelSchema::six_no_pa_refined(),
                                        sample.target.geometry());
        for (LabelId id = 1; id <= 6; ++id) {
            if (sample.target.count_of(id) == 0) continue;
            dice_sum += dice(pred, sample.target, id);
            ++dice_n;
        }
    }
    const double mean_dice = dice_sum / std::max(1, dice_n);
    const double secs = seconds_since(t0);

    const bool ok = mean_dice >= 0.90 && final_loss <= 0.10 * initial && secs < 1800.0;
    std::ostringstream detail;
    detail << "mean foreground dice " << mean_dice << " (>=0.90), loss " << initial << " -> "
           << final_loss << " (<=10%), " << res.loss_history.size() << " steps";
    record(4, "desk-scale learning", ok, secs, detail.str());

    g_unet1_no_pa.emplace(std::move(res.model));
    g_train_set.emplace(std::move(set));
}

// ---------------------------------------------------------------------------
// 5. refinement efficacy
// ---------------------------------------------------------------------------

void criterion_5() {
    const auto t0 = Clock::now();
    int improved = 0, conserved = 0, halted = 0;
    const int kCases = 20;
    double min_gain = 1e9;
    for (int i = 0; i < kCases; ++i) {
        const auto pc = generate_phantom(PhantomParams::compact(4000 + static_cast<unsigned>(i)));
        const auto six = pc.labels.merged_to(LabelSchema::six());
        const LabelId lv = six.schema().id_of("LV"), myo = six.schema().id_of("LVMyo");
        const auto degraded = degrade_labels(six, DegradeMode::LV_OVERSEGMENT, 2);

        const auto res = lv_myo_reassign(pc.intensity, degraded);
        const double before = dice(degraded, six, myo);
        const double after = dice(res.labels, six, myo);
        min_gain = std::min(min_gain, after - before);
        if (after > before) ++improved;
        if (res.labels.count_of(lv) + res.labels.count_of(myo) ==
            degraded.count_of(lv) + degraded.count_of(myo))
            ++conserved;
        if (res.iterations_run <= 3) ++halted;
    }
    std::ostringstream detail;
    detail << improved << "/" << kCases << " improved (min gain " << min_gain << "), "
           << conserved << " conserved, " << halted << " halted within 3";
    record(5, "refinement efficacy", improved == kCases && conserved == kCases &&
                                          halted == kCases,
           seconds_since(t0), detail.str());
}

// ---------------------------------------------------------------------------
// 6. PAV contract
// ---------------------------------------------------------------------------

void criterion_6() {
    const auto t0 = Clock::now();
    const int kCases = 20;
    bool ok = true;
    std::string why;
    for (int i = 0; i < kCases && ok; ++i) {
        const auto pc = generate_phantom(PhantomParams::compact(5000 + static_cast<unsigned>(i)));
        const auto seven = pc.labels.merged_to(LabelSchema::seven());
        const LabelId rv = seven.schema().id_of("RV"), pa = seven.schema().id_of("PA");
        const auto band = extract_pav(seven, Connectivity::FACE6);
        if (band.count() == 0) {
            ok = false;
            why = "empty PAV";
            break;
        }
        // exactly the two-voxel adjacency band: equality with the brute-force
        // band, and every member has a complementary face neighbor
        if (!(band == oracle::adjacency_band(seven, rv, pa, Connectivity::FACE6))) {
            ok = false;
            why = "band differs from adjacency oracle";
            break;
        }
        const auto& offs = neighbor_offsets_26();
        const double spacing = seven.geometry().iso_spacing();
        for (std::int64_t l = 0; l < static_cast<std::int64_t>(band.size()) && ok; ++l) {
            if (!band.get(l)) continue;
            const Index3 idx = seven.dims().unlinear(l);
            const LabelId mine = seven[l];
            const LabelId other = (mine == rv) ? pa : rv;
            bool has_face = false;
            for (std::size_t o = 0; o < 6; ++o) {
                const Index3 nb = idx + offs[o];
                if (seven.dims().contains(nb) && seven.at(nb) == other) has_face = true;
            }
            if (!has_face) {
                ok = false;
                why = "PAV voxel without complementary face neighbor";
            }
            const Vec3 p = seven.geometry().voxel_center(idx);
            if (std::abs(pc.annotations.plane->signed_distance(p)) > spacing) {
                ok = false;
                why = "PAV voxel farther than one voxel from the recorded plane";
            }
        }
    }
    record(6, "PAV contract", ok, seconds_since(t0),
           ok ? std::string("20 phantoms within one voxel of the plane") : why);
}

// ---------------------------------------------------------------------------
// 7. extrapolation premise
// ---------------------------------------------------------------------------

void criterion_7() {
    const auto t0 = Clock::now();
    const Dims3 dims{32, 48, 48};
    auto set = prepare_phantoms(9500, 4, dims);
    const double kCropFraction = 0.25;

    // premise: the cropped input's foreground never covers the full target PA
    const LabelId pa = LabelSchema::seven().id_of("PA");
    bool premise = true;
    std::vector<TrainSample<float>> samples;
    for (const auto& pc : set.cases) {
        auto s = make_training_sample<float>(Stage::UNET2_EXTRAPOLATE, pc, {16, 24, 24},
                                             kCropFraction);
        bool outside = false;
        for (std::int64_t v = 0; v < s.input.voxels(); ++v)
            if (s.target[v] == pa && s.input.channel(0, 0)[v] == 1.0f) outside = true;
        premise = premise && outside;
        samples.push_back(std::move(s));
    }

    // overfit a toy extrapolation network on the four cropped cases
    StageModel<float> model(Stage::UNET2_EXTRAPOLATE, {1, 4});
    model.net.init_weights(21);
    TrainHyperparams hp;
    hp.lr = 1e-3;
    hp.steps = 400;
    hp.seed = 23;
    hp.class_weights = {1, 1, 1, 1, 1, 1, 1, 6};  // emphasize the small PA class
    const auto tr = train(model.net, samples, hp);
    model.net.set_weights(tr.weights);

    double pa_dice_sum = 0;
    bool restored_above_crop = true;
    for (const auto& s : samples) {
        const auto pred = argmax_decode(model.net.forward(s.input), LabelSchema::seven(),
                                        s.target.geometry());
        pa_dice_sum += dice(pred, s.target, pa);
        const auto nz = s.target.dims().nz;
        const auto crop_from = nz - static_cast<std::int64_t>(std::llround(kCropFraction *
                                                                           double(nz)));
        std::int64_t above = 0;
        for (std::int64_t z = crop_from; z < nz; ++z)
            for (std::int64_t y = 0; y < s.target.dims().ny; ++y)
                for (std::int64_t x = 0; x < s.target.dims().nx; ++x)
                    above += (pred.at(z, y, x) == pa);
        restored_above_crop = restored_above_crop && above > 0;
    }
    const double pa_dice = pa_dice_sum / static_cast<double>(samples.size());
    const double secs = seconds_since(t0);
    std::ostringstream detail;
    detail << "premise " << (premise ? "holds" : "violated") << ", train-set Dice(PA) " << pa_dice
           << " (>=0.7), PA restored above crop: " << (restored_above_crop ? "yes" : "no");
    record(7, "extrapolation premise", premise && pa_dice >= 0.7 && restored_above_crop, secs,
           detail.str());
}

// ---------------------------------------------------------------------------
// 8. end-to-end schema validity
// ---------------------------------------------------------------------------

void criterion_8() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string why;

    // ground-truth self-consistency for 8 phantoms (deterministic path)
    for (int i = 0; i < 8 && ok; ++i) {
        const auto pc = generate_phantom(PhantomParams::compact(6000 + static_cast<unsigned>(i)));
        const auto six = pc.labels.merged_to(LabelSchema::six());
        const auto gt = build_ground_truth(pc.intensity, six, pc.annotations);
        if (gt.ten.data() != pc.labels.data()) {
            ok = false;
            why = "ground-truth round trip differs on phantom " + std::to_string(6000 + i);
        }
    }

    // multi-stage inference on 8 phantoms with toy models
    const Dims3 dims{32, 48, 48};
    if (ok) {
        StageModel<float>* m1 = nullptr;
        std::optional<StageModel<float>> fallback;
        if (g_unet1_no_pa) {
            m1 = &*g_unet1_no_pa;
        } else {
            fallback.emplace(Stage::UNET1_NO_PA, WidthScale{1, 8});
            fallback->net.init_weights(31);
            m1 = &*fallback;
        }
        StageModel<float> m2(Stage::UNET2_EXTRAPOLATE, {1, 8});
        m2.net.init_weights(32);
        StageModel<float> m3(Stage::UNET3_PARCELLATE, {1, 8});
        m3.net.init_weights(33);

        InferenceOptions opts;
        opts.la_crop_dims = {16, 24, 24};
        for (int i = 0; i < 8 && ok; ++i) {
            const auto pc =
                generate_phantom(PhantomParams::compact(6100 + static_cast<unsigned>(i)));
            const auto prep = preprocess_case(pc.intensity, pc.labels, dims);
            const auto out = run_inference<float>(prep.intensity, *m1, &m2, &m3, opts);
            if (out.schema().variant() != SchemaVariant::TEN) {
                ok = false;
                why = "output schema is not TEN";
                break;
            }
            try {
                out.validate();
            } catch (const std::exception& e) {
                ok = false;
                why = e.what();
                break;
            }
            // merge maps commute: TEN -> SEVEN -> SIX equals TEN -> SIX
            const auto via_seven = out.merged_to(LabelSchema::seven()).merged_to(LabelSchema::six());
            if (via_seven.data() != out.merged_to(LabelSchema::six()).data()) {
                ok = false;
                why = "merge-map round trip failed";
            }
        }
    }
    record(8, "end-to-end schema validity", ok, seconds_since(t0),
           ok ? "8 ground-truth round trips exact; 8 inferences valid" : why);
}

// ---------------------------------------------------------------------------
// 9. determinism
// ---------------------------------------------------------------------------

void criterion_9() {
    const auto t0 = Clock::now();
    bool ok = true;
    std::string why;

    // phantoms
    const auto pa = generate_phantom(PhantomParams::compact(71));
    const auto pb = generate_phantom(PhantomParams::compact(71));
    if (pa.intensity.data() != pb.intensity.data() || pa.labels.data() != pb.labels.data()) {
        ok = false;
        why = "phantom generation not bit-identical";
    }

    // training loss histories
    if (ok) {
        auto run_once = [&] {
            UNet<float> net(UNetConfig{1, 3, {1, 8}});
            net.init_weights(5);
            Rng rng(6);
            std::vector<TrainSample<float>> data;
            FeatureGrid<float> in(1, 1, {8, 8, 8});
            LabelVolume target(unit_geom({8, 8, 8}), LabelSchema::six());
            for (std::size_t i = 0; i < in.data().size(); ++i) {
                in.data()[i] = static_cast<float>(rng.normal());
                target[static_cast<std::int64_t>(i)] = static_cast<LabelId>(rng.below(3));
            }
            data.push_back({std::move(in), std::move(target)});
            TrainHyperparams hp;
            hp.steps = 20;
            hp.seed = 9;
            return train(net, data, hp).loss_history;
        };
        if (run_once() != run_once()) {
            ok = false;
            why = "training loss history not bit-identical";
        }
    }

    // pipeline outputs
    if (ok) {
        const auto prep = preprocess_case(pa.intensity, pa.labels, {16, 24, 24});
        StageModel<float> m1(Stage::UNET1_NO_PA, {1, 8});
        m1.net.init_weights(41);
        StageModel<float> m2(Stage::UNET2_EXTRAPOLATE, {1, 8});
        m2.net.init_weights(42);
        InferenceOptions opts;
        opts.la_crop_dims = {8, 16, 16};
        const auto r1 = run_inference<float>(prep.intensity, m1, &m2, nullptr, opts);
        const auto r2 = run_inference<float>(prep.intensity, m1, &m2, nullptr, opts);
        if (r1.data() != r2.data()) {
            ok = false;
            why = "pipeline output not bit-identical";
        }
    }
    record(9, "determinism", ok, seconds_since(t0),
           ok ? "phantoms, training and inference bit-identical" : why);
}

}  // namespace

int main() {
    const auto t0 = Clock::now();
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();

    int failures = 0;
    for (const auto& c : g_results) failures += c.passed ? 0 : 1;
    std::printf("---\n%zu criteria, %d failed, total %.1fs\n", g_results.size(), failures,
                seconds_since(t0));
    return failures == 0 ? 0 : 1;
}
