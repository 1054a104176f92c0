// cardseg: whole-heart CT segmentation refinement toolkit, command line.
//
// Exit codes: 0 success, 1 usage error, 2 data/processing error.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include <CLI11.hpp>

#include "cardseg/cardseg.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace cardseg;

Dims3 to_dims(const std::vector<std::int64_t>& v) {
    if (v.size() != 3) throw data_error("expected three dimensions (z y x)");
    return {v[0], v[1], v[2]};
}

void save_mask(const BinaryMask& mask, const Geometry& geom, const std::string& path) {
    std::vector<std::uint8_t> vox(mask.size());
    for (std::size_t i = 0; i < vox.size(); ++i)
        vox[i] = mask.get(static_cast<std::int64_t>(i)) ? 1 : 0;
    auto bytes = nifti::serialize(geom, vox, nifti::DT_UINT8);
    if (has_suffix(path, ".gz")) bytes = nifti::gzip_compress(bytes);
    nifti::write_file_bytes(path, bytes);
}

std::string hash_file_hex(const std::string& path) {
    const auto bytes = nifti::read_file_bytes(path);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw io_error("cannot open: " + path);
    try {
        json j;
        f >> j;
        return j;
    } catch (const json::exception& e) {
        throw io_error("bad JSON in " + path + ": " + e.what());
    }
}

struct CaseEntry {
    std::string case_id;
    std::string image;
    std::string labels;
    std::string schema;      // schema of `labels`: "six" or "ten"
    std::string annotations;
    std::string reference;   // optional TEN reference for scoring
};

CaseEntry case_entry_from_json(const json& jc, const fs::path& base) {
    auto resolve = [&](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute()) return p;
        return (base / p).string();
    };
    CaseEntry e;
    e.case_id = jc.at("case_id").get<std::string>();
    e.image = resolve(jc.at("image").get<std::string>());
    e.labels = resolve(jc.at("labels").get<std::string>());
    e.annotations = resolve(jc.value("annotations", ""));
    e.reference = resolve(jc.value("reference", ""));
    // six-label maps need annotations to refine; ten-label maps stand alone
    e.schema = jc.value("schema", e.annotations.empty() ? "ten" : "six");
    if (e.schema != "six" && e.schema != "ten")
        throw data_error("case '" + e.case_id + "': schema must be six or ten");
    return e;
}

std::vector<CaseEntry> load_case_entries(const std::string& path) {
    json j = load_json_file(path);
    if (j.is_object() && j.contains("cases")) j = j.at("cases");
    if (!j.is_array()) throw io_error("case manifest must be a list of cases: " + path);
    std::vector<CaseEntry> out;
    const fs::path base = fs::path(path).parent_path();
    for (const auto& jc : j) out.push_back(case_entry_from_json(jc, base));
    if (out.empty()) throw data_error("case manifest is empty: " + path);
    return out;
}

LabelVolume load_entry_labels(const CaseEntry& e) {
    return load_labels(e.labels, e.schema == "ten" ? LabelSchema::ten() : LabelSchema::six());
}

PreparedCase prepare_case_from_entry(const CaseEntry& e, Dims3 target_dims) {
    const IntensityVolume image = load_intensity(e.image);
    PreparedCase pc;
    pc.case_id = e.case_id;

    LabelVolume native_ten = [&] {
        if (e.schema == "ten") return load_entry_labels(e);
        if (e.annotations.empty())
            throw data_error("case '" + e.case_id + "': six-label input needs annotations");
        const auto ann = CaseAnnotations::load(e.annotations);
        return build_ground_truth(image, load_entry_labels(e), ann).ten;
    }();

    auto prep = preprocess_case(image, native_ten, target_dims);
    pc.intensity = std::move(prep.intensity);
    pc.gt = derive_ground_truth_from_ten(prep.labels);
    return pc;
}

// ---- subcommand bodies ----

int cmd_phantom(const std::string& out_dir, int count, std::uint64_t seed,
                const std::string& preset) {
    fs::create_directories(out_dir);
    json manifest;
    manifest["cases"] = json::array();
    for (int i = 0; i < count; ++i) {
        const auto params = (preset == "large") ? PhantomParams::large(seed + static_cast<unsigned>(i))
                                                : PhantomParams::compact(seed + static_cast<unsigned>(i));
        const PhantomCase pc = generate_phantom(params);
        const std::string id = "phantom" + std::to_string(seed + static_cast<unsigned>(i));
        const std::string img = id + "_image.nii.gz";
        const std::string lab = id + "_labels.nii.gz";
        const std::string ann = id + "_annotations.json";
        save_volume(pc.intensity, (fs::path(out_dir) / img).string());
        save_volume(pc.labels, (fs::path(out_dir) / lab).string());
        pc.annotations.save((fs::path(out_dir) / ann).string());
        manifest["cases"].push_back({{"case_id", id},
                                     {"image", img},
                                     {"labels", lab},
                                     {"schema", "ten"},
                                     {"annotations", ann},
                                     {"reference", lab}});
        std::cout << "wrote " << id << " (" << pc.labels.dims().str() << ")\n";
    }
    std::ofstream mf(fs::path(out_dir) / "cases.json");
    mf << manifest.dump(2) << "\n";
    return 0;
}

int cmd_preprocess(const std::string& image_path, const std::string& labels_path,
                   const std::string& schema, const std::vector<std::int64_t>& dims,
                   double spacing, const std::string& out_image, const std::string& out_labels) {
    const auto image = load_intensity(image_path);
    const auto labels = load_labels(labels_path, LabelSchema::by_name(schema));
    auto res = preprocess_case(image, labels, to_dims(dims), spacing);
    save_volume(res.intensity, out_image);
    save_volume(res.labels, out_labels);
    std::cout << "final spacing " << res.final_spacing << " mm, dims "
              << res.labels.dims().str() << "\n";
    return 0;
}

int cmd_refine_lv(const std::string& image_path, const std::string& labels_path,
                  const std::string& schema, const std::string& out_path) {
    const auto image = load_intensity(image_path);
    const auto labels = load_labels(labels_path, LabelSchema::by_name(schema));
    auto res = lv_myo_reassign(image, labels);
    save_volume(res.labels, out_path);
    std::cout << "iterations " << res.iterations_run << ", transferred "
              << res.voxels_transferred << " voxels\n";
    return 0;
}

int cmd_extract_pav(const std::string& labels_path, const std::string& schema,
                    const std::string& connectivity, const std::string& out_path) {
    const auto labels = load_labels(labels_path, LabelSchema::by_name(schema));
    const auto mask = extract_pav(labels, connectivity_from_string(connectivity));
    save_mask(mask, labels.geometry(), out_path);
    std::cout << "pav voxels " << mask.count() << "\n";
    return 0;
}

int cmd_split_plane(const std::string& labels_path, const std::string& in_schema,
                    const std::string& out_schema, const std::string& ann_path,
                    const std::string& source, const std::string& near,
                    const std::string& far, const std::string& out_path) {
    const auto labels =
        load_labels(labels_path, LabelSchema::by_name(in_schema)).with_schema(LabelSchema::by_name(out_schema));
    const auto ann = CaseAnnotations::load(ann_path);
    if (!ann.plane) throw data_error("annotation file has no plane");
    const auto& schema = labels.schema();
    const auto out = split_by_plane(labels, schema.id_of(source), *ann.plane, schema.id_of(near),
                                    schema.id_of(far));
    save_volume(out, out_path);
    std::cout << far << " voxels " << out.count_of(schema.id_of(far)) << "\n";
    return 0;
}

int cmd_parcellate(const std::string& labels_path, const std::string& schema,
                   const std::string& ann_path, const std::string& out_path) {
    const auto labels = load_labels(labels_path, LabelSchema::by_name(schema));
    const auto ann = CaseAnnotations::load(ann_path);
    const auto out = parcellate_la_boxes(labels, ann.boxes);
    save_volume(out, out_path);
    return 0;
}

int cmd_fuse(const std::string& base_path, const std::string& extr_path,
             const std::string& parc_path, const std::string& out_path) {
    const auto base = load_labels(base_path, LabelSchema::six_no_pa_refined());
    const auto extr = load_labels(extr_path, LabelSchema::seven());
    const auto parc = load_labels(parc_path, LabelSchema::ten());
    save_volume(fuse_predictions(base, extr, parc), out_path);
    return 0;
}

int cmd_cleanup(const std::string& labels_path, const std::string& schema,
                const std::vector<std::string>& ids, const std::string& connectivity,
                const std::string& out_path) {
    const auto labels = load_labels(labels_path, LabelSchema::by_name(schema));
    std::vector<LabelId> clean_ids;
    if (ids.empty() && labels.schema().variant() == SchemaVariant::TEN)
        clean_ids = cleanup_label_ids();
    else
        for (const auto& name : ids) clean_ids.push_back(labels.schema().id_of(name));
    save_volume(largest_component_cleanup(labels, clean_ids, connectivity_from_string(connectivity)),
                out_path);
    return 0;
}

int cmd_dice(const std::string& pred_path, const std::string& ref_path, const std::string& schema,
             const std::string& format, const std::string& out_path) {
    const auto& sch = LabelSchema::by_name(schema);
    const auto pred = load_labels(pred_path, sch);
    const auto ref = load_labels(ref_path, sch);
    const auto report = dice_report({{&pred, &ref}}, sch);
    const std::string text = (format == "csv") ? report.to_csv() : report.to_table();
    if (out_path.empty())
        std::cout << text;
    else {
        std::ofstream f(out_path, std::ios::trunc);
        f << text;
    }
    return 0;
}

int cmd_train(const std::string& stage_name, const std::string& cases_path,
              const std::string& config_path, const std::vector<std::int64_t>& dims,
              const std::vector<std::int64_t>& la_dims, double fov_crop,
              std::optional<std::uint64_t> seed_override, const std::string& out_path) {
    const Stage stage = stage_from_string(stage_name);
    const json cfg = config_path.empty() ? json::object() : load_json_file(config_path);
    TrainHyperparams hp;
    hp.lr = cfg.value("lr", 1e-3);
    hp.steps = cfg.value("steps", 100);
    hp.batch = cfg.value("batch", 1);
    hp.seed = seed_override.value_or(cfg.value("seed", 0ull));
    hp.val_interval = cfg.value("val_interval", 25);
    if (cfg.contains("class_weights"))
        hp.class_weights = cfg.at("class_weights").get<std::vector<double>>();
    const WidthScale ws = WidthScale::parse(cfg.value("width_scale", "1/4"));

    const auto entries = load_case_entries(cases_path);
    std::vector<PreparedCase> cases;
    for (const auto& e : entries) {
        cases.push_back(prepare_case_from_entry(e, to_dims(dims)));
        std::cout << "prepared " << e.case_id << "\n";
    }
    auto res = train_stage<float>(stage, cases, ws, hp, to_dims(la_dims), fov_crop);
    save_stage_model(res.model, out_path);
    std::cout << "steps " << res.loss_history.size() << ", first loss "
              << (res.loss_history.empty() ? 0.0 : res.loss_history.front()) << ", last loss "
              << (res.loss_history.empty() ? 0.0 : res.loss_history.back()) << "\n";
    if (res.test_report) std::cout << res.test_report->to_table();
    return 0;
}

struct PipelineModels {
    std::optional<StageModel<float>> unet1_no_pa, unet2, unet3, unet4;
};

json run_pipeline_case(const CaseEntry& e, const PipelineModels& models,
                       const std::map<std::string, std::string>& model_paths, Dims3 target_dims,
                       const InferenceOptions& opts, const std::vector<std::string>& stages,
                       const std::string& out_dir) {
    const IntensityVolume image = load_intensity(e.image);
    const LabelVolume labels = load_entry_labels(e);
    auto prep = preprocess_case(image, labels, target_dims);

    LabelVolume result =
        models.unet4 ? run_inference_direct(prep.intensity, *models.unet4, opts)
                     : run_inference(prep.intensity, *models.unet1_no_pa,
                                     models.unet2 ? &*models.unet2 : nullptr,
                                     models.unet3 ? &*models.unet3 : nullptr, opts);

    const std::string out_name = e.case_id + "_ten.nii.gz";
    save_volume(result, (fs::path(out_dir) / out_name).string());

    json prov;
    prov["case_id"] = e.case_id;
    prov["stages"] = stages;
    prov["final_spacing"] = prep.final_spacing;
    prov["output"] = out_name;
    for (const auto& [stage, path] : model_paths)
        prov["models"][stage] = {{"path", path}, {"fnv1a64", hash_file_hex(path)}};
    if (!e.reference.empty()) {
        const auto ref_native = load_labels(e.reference, LabelSchema::ten());
        const auto ref = preprocess_case(image, ref_native, target_dims).labels;
        json scores;
        for (const auto& entry : LabelSchema::ten().entries())
            scores[entry.name] = dice(result, ref, entry.id);
        prov["dice"] = scores;
    }
    std::ofstream pf(fs::path(out_dir) / (e.case_id + "_provenance.json"));
    pf << prov.dump(2) << "\n";
    return prov;
}

int cmd_pipeline(const std::string& manifest_path, int jobs) {
    const json m = load_json_file(manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();
    auto resolve = [&](const std::string& p) {
        if (p.empty() || fs::path(p).is_absolute()) return p;
        return (base / p).string();
    };

    const Dims3 target_dims = to_dims(m.value("target_dims", std::vector<std::int64_t>{128, 192, 192}));
    InferenceOptions opts;
    opts.la_crop_dims = to_dims(m.value("la_crop_dims", std::vector<std::int64_t>{128, 128, 128}));
    const bool has_unet4_model = m.at("models").contains("unet4");
    std::vector<std::string> stages = m.value(
        "stages", has_unet4_model
                      ? std::vector<std::string>{"preprocess", "unet4", "cleanup"}
                      : std::vector<std::string>{"preprocess", "unet1_no_pa", "unet2", "unet3",
                                                 "fuse", "cleanup"});
    opts.run_cleanup =
        std::find(stages.begin(), stages.end(), "cleanup") != stages.end();

    PipelineModels models;
    std::map<std::string, std::string> model_paths;
    for (const auto& [stage, path] : m.at("models").items()) {
        const std::string full = resolve(path.get<std::string>());
        model_paths[stage] = full;
        auto loaded = load_stage_model<float>(full);
        switch (loaded.spec.stage) {
            case Stage::UNET1_NO_PA: models.unet1_no_pa.emplace(std::move(loaded)); break;
            case Stage::UNET2_EXTRAPOLATE: models.unet2.emplace(std::move(loaded)); break;
            case Stage::UNET3_PARCELLATE: models.unet3.emplace(std::move(loaded)); break;
            case Stage::UNET4: models.unet4.emplace(std::move(loaded)); break;
            default: throw data_error("model for stage '" + stage + "' is not an inference stage");
        }
    }
    // honor the stage list: drop models for stages not requested
    auto wants = [&](const char* s) {
        return std::find(stages.begin(), stages.end(), s) != stages.end();
    };
    if (!wants("unet2")) models.unet2.reset();
    if (!wants("unet3")) models.unet3.reset();
    if (!wants("unet4")) models.unet4.reset();
    if (!models.unet4 && !models.unet1_no_pa)
        throw data_error("pipeline needs a unet1_no_pa model (or a unet4 model)");

    std::vector<CaseEntry> entries;
    for (const auto& jc : m.at("cases")) entries.push_back(case_entry_from_json(jc, base));
    const std::string out_dir = resolve(m.value("output_dir", "pipeline_out"));
    fs::create_directories(out_dir);

    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::string first_error;
    std::mutex err_mutex;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= entries.size() || failed.load()) return;
            try {
                run_pipeline_case(entries[i], models, model_paths, target_dims, opts, stages,
                                  out_dir);
            } catch (const std::exception& ex) {
                std::lock_guard<std::mutex> lk(err_mutex);
                failed = true;
                first_error = "case " + entries[i].case_id + ": " + ex.what();
                return;
            }
        }
    };
    if (jobs <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (failed) throw data_error(first_error);
    std::cout << "processed " << entries.size() << " cases into " << out_dir << "\n";
    return 0;
}

int cmd_infer(const std::string& image_path, const std::string& labels_path,
              const std::string& labels_schema, const std::string& m1, const std::string& m2,
              const std::string& m3, const std::string& m4, const std::vector<std::int64_t>& dims,
              const std::vector<std::int64_t>& la_dims, bool no_cleanup,
              const std::string& out_path) {
    const auto image = load_intensity(image_path);
    const auto labels = load_labels(labels_path, LabelSchema::by_name(labels_schema));
    auto prep = preprocess_case(image, labels, to_dims(dims));
    InferenceOptions opts;
    opts.la_crop_dims = to_dims(la_dims);
    opts.run_cleanup = !no_cleanup;

    LabelVolume result = [&] {
        if (!m4.empty()) {
            auto unet4 = load_stage_model<float>(m4);
            return run_inference_direct(prep.intensity, unet4, opts);
        }
        auto unet1 = load_stage_model<float>(m1);
        std::optional<StageModel<float>> unet2, unet3;
        if (!m2.empty()) unet2.emplace(load_stage_model<float>(m2));
        if (!m3.empty()) unet3.emplace(load_stage_model<float>(m3));
        return run_inference(prep.intensity, unet1, unet2 ? &*unet2 : nullptr,
                             unet3 ? &*unet3 : nullptr, opts);
    }();
    save_volume(result, out_path);
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"whole-heart CT segmentation refinement toolkit"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global random seed")->capture_default_str();

    // phantom
    std::string ph_dir = "phantoms";
    int ph_count = 1;
    std::string ph_preset = "compact";
    auto* sc_phantom = app.add_subcommand("phantom", "generate synthetic heart cases");
    sc_phantom->add_option("--out-dir", ph_dir, "output directory")->capture_default_str();
    sc_phantom->add_option("--count", ph_count, "number of cases")->capture_default_str();
    sc_phantom->add_option("--preset", ph_preset, "compact|large")
        ->check(CLI::IsMember({"compact", "large"}));

    // preprocess
    std::string pp_image, pp_labels, pp_out_image, pp_out_labels, pp_schema = "six";
    std::vector<std::int64_t> pp_dims{128, 192, 192};
    double pp_spacing = 1.0;
    auto* sc_pp = app.add_subcommand("preprocess", "resample, center, fit and crop/pad");
    sc_pp->add_option("--image", pp_image)->required();
    sc_pp->add_option("--labels", pp_labels)->required();
    sc_pp->add_option("--schema", pp_schema, "label schema of the input");
    sc_pp->add_option("--dims", pp_dims, "target dims z y x")->expected(3);
    sc_pp->add_option("--spacing", pp_spacing, "base isotropic spacing in mm");
    sc_pp->add_option("--out-image", pp_out_image)->required();
    sc_pp->add_option("--out-labels", pp_out_labels)->required();

    // refine-lv
    std::string rl_image, rl_labels, rl_out, rl_schema = "six";
    auto* sc_rl = app.add_subcommand("refine-lv", "LV/LVMyo over-segmentation correction");
    sc_rl->add_option("--image", rl_image)->required();
    sc_rl->add_option("--labels", rl_labels)->required();
    sc_rl->add_option("--schema", rl_schema);
    sc_rl->add_option("--out", rl_out)->required();

    // extract-pav
    std::string pav_labels, pav_out, pav_schema = "seven", pav_conn = "face6";
    auto* sc_pav = app.add_subcommand("extract-pav", "RV/PA adjacency band");
    sc_pav->add_option("--labels", pav_labels)->required();
    sc_pav->add_option("--schema", pav_schema);
    sc_pav->add_option("--connectivity", pav_conn);
    sc_pav->add_option("--out", pav_out)->required();

    // split-plane
    std::string sp_labels, sp_ann, sp_out, sp_in_schema = "six", sp_out_schema = "seven";
    std::string sp_source = "RV", sp_near = "RV", sp_far = "PA";
    auto* sc_sp = app.add_subcommand("split-plane", "partition a label by the annotated plane");
    sc_sp->add_option("--labels", sp_labels)->required();
    sc_sp->add_option("--annotations", sp_ann)->required();
    sc_sp->add_option("--in-schema", sp_in_schema);
    sc_sp->add_option("--out-schema", sp_out_schema);
    sc_sp->add_option("--source", sp_source);
    sc_sp->add_option("--near", sp_near);
    sc_sp->add_option("--far", sp_far);
    sc_sp->add_option("--out", sp_out)->required();

    // parcellate
    std::string pc_labels, pc_ann, pc_out, pc_schema = "seven";
    auto* sc_pc = app.add_subcommand("parcellate", "LA parcellation from annotation boxes");
    sc_pc->add_option("--labels", pc_labels)->required();
    sc_pc->add_option("--schema", pc_schema);
    sc_pc->add_option("--annotations", pc_ann)->required();
    sc_pc->add_option("--out", pc_out)->required();

    // fuse
    std::string fu_base, fu_extr, fu_parc, fu_out;
    auto* sc_fu = app.add_subcommand("fuse", "fuse stage predictions into the ten-label map");
    sc_fu->add_option("--base", fu_base)->required();
    sc_fu->add_option("--extrapolated", fu_extr)->required();
    sc_fu->add_option("--parcellated", fu_parc)->required();
    sc_fu->add_option("--out", fu_out)->required();

    // cleanup
    std::string cl_labels, cl_out, cl_schema = "ten", cl_conn = "vertex26";
    std::vector<std::string> cl_ids;
    auto* sc_cl = app.add_subcommand("cleanup", "largest-connected-component cleanup");
    sc_cl->add_option("--labels", cl_labels)->required();
    sc_cl->add_option("--schema", cl_schema);
    sc_cl->add_option("--ids", cl_ids, "label names to clean (default: single-object labels)");
    sc_cl->add_option("--connectivity", cl_conn);
    sc_cl->add_option("--out", cl_out)->required();

    // dice
    std::string di_pred, di_ref, di_schema = "ten", di_format = "table", di_out;
    auto* sc_di = app.add_subcommand("dice", "overlap scores between two label maps");
    sc_di->add_option("--pred", di_pred)->required();
    sc_di->add_option("--ref", di_ref)->required();
    sc_di->add_option("--schema", di_schema);
    sc_di->add_option("--format", di_format)->check(CLI::IsMember({"csv", "table"}));
    sc_di->add_option("--out", di_out);

    // train
    std::string tr_stage, tr_cases, tr_config, tr_out;
    std::vector<std::int64_t> tr_dims{128, 192, 192}, tr_la_dims{128, 128, 128};
    double tr_fov_crop = 0.0;
    auto* sc_tr = app.add_subcommand("train", "train one network stage");
    sc_tr->add_option("--stage", tr_stage)->required();
    sc_tr->add_option("--cases", tr_cases, "case manifest JSON")->required();
    sc_tr->add_option("--config", tr_config, "training config JSON");
    sc_tr->add_option("--dims", tr_dims, "preprocess target dims z y x")->expected(3);
    sc_tr->add_option("--la-dims", tr_la_dims, "LA crop dims z y x")->expected(3);
    sc_tr->add_option("--fov-crop", tr_fov_crop, "superior crop fraction for inputs");
    sc_tr->add_option("--out", tr_out, "output model .w3u")->required();

    // infer
    std::string in_image, in_labels, in_schema = "six", in_m1, in_m2, in_m3, in_m4, in_out;
    std::vector<std::int64_t> in_dims{128, 192, 192}, in_la_dims{128, 128, 128};
    bool in_no_cleanup = false;
    auto* sc_in = app.add_subcommand("infer", "run inference on one case");
    sc_in->add_option("--image", in_image)->required();
    sc_in->add_option("--labels", in_labels, "initial labels for preprocessing")->required();
    sc_in->add_option("--labels-schema", in_schema, "schema of the initial labels");
    sc_in->add_option("--model-unet1-no-pa", in_m1);
    sc_in->add_option("--model-unet2", in_m2);
    sc_in->add_option("--model-unet3", in_m3);
    sc_in->add_option("--model-unet4", in_m4);
    sc_in->add_option("--dims", in_dims)->expected(3);
    sc_in->add_option("--la-dims", in_la_dims)->expected(3);
    sc_in->add_flag("--no-cleanup", in_no_cleanup);
    sc_in->add_option("--out", in_out)->required();

    // pipeline
    std::string pl_manifest;
    int pl_jobs = 1;
    auto* sc_pl = app.add_subcommand("pipeline", "batch multi-stage inference from a manifest");
    sc_pl->add_option("--manifest", pl_manifest)->required();
    sc_pl->add_option("--jobs", pl_jobs, "parallel case workers")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (*sc_phantom) return cmd_phantom(ph_dir, ph_count, seed, ph_preset);
        if (*sc_pp)
            return cmd_preprocess(pp_image, pp_labels, pp_schema, pp_dims, pp_spacing,
                                  pp_out_image, pp_out_labels);
        if (*sc_rl) return cmd_refine_lv(rl_image, rl_labels, rl_schema, rl_out);
        if (*sc_pav) return cmd_extract_pav(pav_labels, pav_schema, pav_conn, pav_out);
        if (*sc_sp)
            return cmd_split_plane(sp_labels, sp_in_schema, sp_out_schema, sp_ann, sp_source,
                                   sp_near, sp_far, sp_out);
        if (*sc_pc) return cmd_parcellate(pc_labels, pc_schema, pc_ann, pc_out);
        if (*sc_fu) return cmd_fuse(fu_base, fu_extr, fu_parc, fu_out);
        if (*sc_cl) return cmd_cleanup(cl_labels, cl_schema, cl_ids, cl_conn, cl_out);
        if (*sc_di) return cmd_dice(di_pred, di_ref, di_schema, di_format, di_out);
        if (*sc_tr)
            return cmd_train(tr_stage, tr_cases, tr_config, tr_dims, tr_la_dims, tr_fov_crop,
                             app.count("--seed") ? std::optional<std::uint64_t>(seed)
                                                 : std::nullopt,
                             tr_out);
        if (*sc_in)
            return cmd_infer(in_image, in_labels, in_schema, in_m1, in_m2, in_m3, in_m4, in_dims,
                             in_la_dims, in_no_cleanup, in_out);
        if (*sc_pl) return cmd_pipeline(pl_manifest, pl_jobs);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
