#include <catch2/catch_amalgamated.hpp>

#include "cardseg/pipeline.hpp"
#include "oracles.hpp"

using namespace cardseg;

namespace {

Geometry unit_geom(Dims3 dims) { return {dims, {1, 1, 1}, {0, 0, 0}}; }

PreparedCase prepare_phantom(std::uint64_t seed, Dims3 target) {
    const auto pc = generate_phantom(PhantomParams::compact(seed));
    auto prep = preprocess_case(pc.intensity, pc.labels, target);
    PreparedCase out;
    out.case_id = "phantom" + std::to_string(seed);
    out.intensity = std::move(prep.intensity);
    out.gt = derive_ground_truth_from_ten(prep.labels);
    return out;
}

}  // namespace

TEST_CASE("stage specs encode the schema transitions of the flow", "[pipeline]") {
    REQUIRE(StageSpec::of(Stage::UNET1_NO_PA).in_channels == 1);
    REQUIRE(StageSpec::of(Stage::UNET1_NO_PA).out_channels == 7);
    REQUIRE(StageSpec::of(Stage::UNET2_EXTRAPOLATE).in_channels == 7);
    REQUIRE(StageSpec::of(Stage::UNET2_EXTRAPOLATE).out_channels == 8);
    REQUIRE(StageSpec::of(Stage::UNET3_PARCELLATE).in_channels == 2);
    REQUIRE(StageSpec::of(Stage::UNET3_PARCELLATE).out_channels == 5);
    REQUIRE(StageSpec::of(Stage::UNET4).out_channels == 11);
    REQUIRE(StageSpec::of(Stage::UNET2_EXTRAPOLATE).output_schema->variant() ==
            SchemaVariant::SEVEN);
}

TEST_CASE("build_ground_truth handles degenerate annotations", "[pipeline]") {
    const auto pc = generate_phantom(PhantomParams::compact(40));
    const LabelVolume six = pc.labels.merged_to(LabelSchema::six());

    SECTION("plane beyond the heart leaves PA empty") {
        CaseAnnotations ann = pc.annotations;
        ann.plane = Plane({0, 0, 1e6}, {0, 0, 1});
        ann.boxes.clear();
        const auto gt = build_ground_truth(pc.intensity, six, ann);
        REQUIRE(gt.seven.count_of(LabelSchema::seven().id_of("PA")) == 0);
        // seven equals six_no_pa plus an (empty) PA label
        REQUIRE(gt.seven.data() == gt.six_no_pa_refined.data());
    }
    SECTION("no boxes: the LA becomes wholly LAbody") {
        CaseAnnotations ann = pc.annotations;
        ann.boxes.clear();
        const auto gt = build_ground_truth(pc.intensity, six, ann);
        REQUIRE(gt.ten.count_of(LabelSchema::ten().id_of("LAbody")) ==
                six.count_of(LabelSchema::six().id_of("LA")));
        REQUIRE(gt.ten.count_of(LabelSchema::ten().id_of("LPV")) == 0);
    }
    SECTION("missing plane errors") {
        CaseAnnotations ann = pc.annotations;
        ann.plane.reset();
        REQUIRE_THROWS_AS(build_ground_truth(pc.intensity, six, ann), data_error);
    }
}

TEST_CASE("ground truth construction conserves foreground voxel count", "[pipeline]") {
    const auto pc = generate_phantom(PhantomParams::compact(41));
    const LabelVolume six = pc.labels.merged_to(LabelSchema::six());
    const auto gt = build_ground_truth(pc.intensity, six, pc.annotations);
    REQUIRE(gt.seven.foreground_count() == six.foreground_count());
    REQUIRE(gt.ten.foreground_count() == six.foreground_count());
}

TEST_CASE("annotations survive a JSON round trip bit-exactly", "[pipeline]") {
    const auto pc = generate_phantom(PhantomParams::compact(42));
    const auto j = pc.annotations.to_json();
    const auto back = CaseAnnotations::from_json(nlohmann::json::parse(j.dump()));
    REQUIRE(back.plane->point == pc.annotations.plane->point);
    REQUIRE(back.plane->normal == pc.annotations.plane->normal);
    REQUIRE(back.boxes.size() == pc.annotations.boxes.size());
    for (std::size_t i = 0; i < back.boxes.size(); ++i) {
        REQUIRE(back.boxes[i].lo == pc.annotations.boxes[i].lo);
        REQUIRE(back.boxes[i].hi == pc.annotations.boxes[i].hi);
        REQUIRE(back.boxes[i].label == pc.annotations.boxes[i].label);
    }

    // bit-exact plane round trip keeps the split identical
    const LabelVolume seven = pc.labels.merged_to(LabelSchema::seven());
    const auto merged = degrade_labels(seven, DegradeMode::PA_INTO_RV, 1);
    const auto split =
        split_by_plane(merged.with_schema(LabelSchema::seven()), LabelSchema::seven().id_of("RV"),
                       *back.plane, LabelSchema::seven().id_of("RV"),
                       LabelSchema::seven().id_of("PA"));
    REQUIRE(split.data() == seven.data());
}

TEST_CASE("simulate_fov_crop arithmetic", "[pipeline]") {
    IntensityVolume img(unit_geom({128, 4, 4}), 7.0f);
    LabelVolume lab(unit_geom({128, 4, 4}), LabelSchema::six(), 1);

    SECTION("fraction zero is the identity") {
        const auto [ci, cl] = simulate_fov_crop(img, lab, 0.0);
        REQUIRE(ci.data() == img.data());
        REQUIRE(cl.data() == lab.data());
    }
    SECTION("a quarter of 128 slices blanks the top 32") {
        const auto [ci, cl] = simulate_fov_crop(img, lab, 0.25);
        for (std::int64_t z = 0; z < 128; ++z) {
            const bool blank = z >= 96;
            REQUIRE(cl.at(z, 0, 0) == (blank ? 0 : 1));
            REQUIRE(ci.at(Index3{z, 0, 0}) == (blank ? 0.0f : 7.0f));
        }
    }
    SECTION("fraction must stay below one half") {
        REQUIRE_THROWS_AS(simulate_fov_crop(img, lab, 0.5), data_error);
    }
}

TEST_CASE("fov-cropped training pairs satisfy the extrapolation premise", "[pipeline]") {
    const auto pc = prepare_phantom(50, {32, 48, 48});
    const auto sample =
        make_training_sample<float>(Stage::UNET2_EXTRAPOLATE, pc, {16, 24, 24}, 0.25);

    // target PA must not be contained in the input's foreground
    const LabelId pa = LabelSchema::seven().id_of("PA");
    bool pa_outside_input = false;
    for (std::int64_t v = 0; v < sample.input.voxels(); ++v) {
        const bool input_fg = sample.input.channel(0, 0)[v] == 0.0f;  // not background channel
        if (sample.target[v] == pa && !input_fg) pa_outside_input = true;
    }
    REQUIRE(pa_outside_input);
    REQUIRE(sample.input.channels() == 7);
    REQUIRE(sample.target.count_of(pa) > 0);
}

TEST_CASE("unet3 training samples have 2 input and 5 target channels", "[pipeline]") {
    const auto pc = prepare_phantom(51, {32, 48, 48});
    const auto sample = make_training_sample<float>(Stage::UNET3_PARCELLATE, pc, {16, 24, 24});
    REQUIRE(sample.input.channels() == 2);
    REQUIRE(sample.input.spatial() == Dims3{16, 24, 24});
    LabelId max_target = 0;
    for (auto v : sample.target.data()) max_target = std::max(max_target, v);
    REQUIRE(max_target <= 4);  // background + four sublabels
    REQUIRE(sample.target.count_of(1) > 0);  // LAbody present

    // input channel 1 marks exactly the LA voxels of the crop
    for (std::int64_t v = 0; v < sample.input.voxels(); ++v) {
        const float fg = sample.input.channel(0, 1)[v];
        REQUIRE(((fg == 1.0f) == (sample.target[v] != 0)));
    }
}

TEST_CASE("dataset splits are deterministic and disjoint", "[pipeline]") {
    const auto a = split_dataset(20, 7);
    const auto b = split_dataset(20, 7);
    REQUIRE(a.train == b.train);
    REQUIRE(a.val == b.val);
    REQUIRE(a.test == b.test);
    const auto c = split_dataset(20, 8);
    REQUIRE(a.train != c.train);

    std::set<std::size_t> all;
    for (auto i : a.train) all.insert(i);
    for (auto i : a.val) all.insert(i);
    for (auto i : a.test) all.insert(i);
    REQUIRE(all.size() == 20);
}

TEST_CASE("multi-stage inference yields a valid ten-label map", "[pipeline]") {
    // untrained (random-weight) toy models: the schema contract must hold
    // regardless of model quality
    const Dims3 dims{16, 24, 24};
    const auto pc = prepare_phantom(52, dims);

    StageModel<float> m1(Stage::UNET1_NO_PA, {1, 8});
    m1.net.init_weights(1);
    StageModel<float> m2(Stage::UNET2_EXTRAPOLATE, {1, 8});
    m2.net.init_weights(2);
    StageModel<float> m3(Stage::UNET3_PARCELLATE, {1, 8});
    m3.net.init_weights(3);

    InferenceOptions opts;
    opts.la_crop_dims = {8, 16, 16};
    const auto out = run_inference<float>(pc.intensity, m1, &m2, &m3, opts);
    REQUIRE(out.schema().variant() == SchemaVariant::TEN);
    REQUIRE_NOTHROW(out.validate());
    REQUIRE(out.dims() == dims);

    SECTION("inference is deterministic for fixed weights") {
        const auto again = run_inference<float>(pc.intensity, m1, &m2, &m3, opts);
        REQUIRE(again.data() == out.data());
    }
    SECTION("omitting unet2 degrades to an empty PA") {
        const auto no2 = run_inference<float>(pc.intensity, m1, nullptr, &m3, opts);
        REQUIRE(no2.count_of(LabelSchema::ten().id_of("PA")) == 0);
        REQUIRE_NOTHROW(no2.validate());
    }
    SECTION("model-stage mixups are rejected") {
        REQUIRE_THROWS_AS(run_inference<float>(pc.intensity, m2, nullptr, nullptr, opts), data_error);
    }
}

TEST_CASE("fusing the ground-truth stages reproduces the phantom exactly", "[pipeline]") {
    const auto pc = generate_phantom(PhantomParams::compact(53));
    const auto gt = derive_ground_truth_from_ten(pc.labels);

    // parcellated input: the LA sublabels of the truth, background elsewhere
    LabelVolume parcels(pc.labels.geometry(), LabelSchema::ten());
    for (std::size_t i = 0; i < pc.labels.size(); ++i) {
        const auto l = static_cast<std::int64_t>(i);
        for (LabelId sid : la_sublabel_ids())
            if (pc.labels[l] == sid) parcels[l] = sid;
    }
    const auto fused = fuse_predictions(gt.six_no_pa_refined, gt.seven, parcels);
    REQUIRE(fused.data() == pc.labels.data());

    // merge-map round trip: folding the fusion back to six recovers the base
    // with PA rejoined to RV
    const auto folded = fused.merged_to(LabelSchema::six());
    const auto six = pc.labels.merged_to(LabelSchema::six());
    REQUIRE(folded.data() == six.data());
}

TEST_CASE("stage outputs validate against their declared schemas", "[pipeline]") {
    const auto pc = prepare_phantom(54, {16, 24, 24});
    REQUIRE_NOTHROW(pc.gt.ten.validate());
    REQUIRE_NOTHROW(pc.gt.seven.validate());
    REQUIRE_NOTHROW(pc.gt.six_no_pa_refined.validate());
    REQUIRE(pc.gt.seven.schema().variant() == SchemaVariant::SEVEN);
    REQUIRE(pc.gt.six_no_pa_refined.count_of(7) == 0);
}

TEST_CASE("normalize_intensity standardizes per volume", "[pipeline]") {
    Rng rng(60);
    IntensityVolume v(unit_geom({8, 8, 8}));
    for (auto& x : v.data()) x = static_cast<float>(rng.normal(250.0, 40.0));
    const auto out = normalize_intensity(v);
    double sum = 0, sumsq = 0;
    for (auto x : out.data()) {
        sum += x;
        sumsq += static_cast<double>(x) * x;
    }
    const double n = static_cast<double>(out.size());
    REQUIRE(std::abs(sum / n) < 1e-4);
    REQUIRE(sumsq / n == Catch::Approx(1.0).epsilon(1e-3));
}
