// ropedit: probing and attention-injection editing for the toy RoPE-based
// multimodal diffusion transformer.
//
// Subcommands: probe, classify, edit, invert, report. Every run writes a
// run.json echoing the fully resolved manifest; feeding that file back via
// --manifest reproduces the run byte for byte.
//
// Exit codes: 0 success, 2 input/config error, 3 algorithmic failure
// (e.g. the attention reasoning produced an empty mask).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ropedit/editing.hpp"
#include "ropedit/errors.hpp"
#include "ropedit/io.hpp"
#include "ropedit/masks.hpp"
#include "ropedit/mmdit.hpp"
#include "ropedit/presets.hpp"
#include "ropedit/probe.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ropedit;

namespace {

// ------------------------------------------------------------- json helpers

json config_to_json(const mmdit::ModelConfig& c) {
    return json{{"n_multi", c.n_multi},
                {"n_single", c.n_single},
                {"heads", c.heads},
                {"head_dim", c.head_dim},
                {"text_len", c.text_len},
                {"grid_h", c.grid_h},
                {"grid_w", c.grid_w},
                {"vocab_buckets", c.vocab_buckets},
                {"rope_base", c.rope_base},
                {"guidance_scale", c.guidance_scale},
                {"steps_T", c.steps_T}};
}

mmdit::ModelConfig config_from_json(const json& j) {
    mmdit::ModelConfig c;
    const json known = config_to_json(c);
    for (const auto& [key, value] : j.items()) {
        if (!known.contains(key)) throw InputError("unknown model config key '" + key + "'");
        (void)value;
    }
    c.n_multi = j.value("n_multi", c.n_multi);
    c.n_single = j.value("n_single", c.n_single);
    c.heads = j.value("heads", c.heads);
    c.head_dim = j.value("head_dim", c.head_dim);
    c.text_len = j.value("text_len", c.text_len);
    c.grid_h = j.value("grid_h", c.grid_h);
    c.grid_w = j.value("grid_w", c.grid_w);
    c.vocab_buckets = j.value("vocab_buckets", c.vocab_buckets);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.guidance_scale = j.value("guidance_scale", c.guidance_scale);
    c.steps_T = j.value("steps_T", c.steps_T);
    return c;
}

json layer_sets_to_json(const probe::LayerSets& sets) {
    return json{{"P", sets.P}, {"C", sets.C}, {"L", sets.L_all}};
}

probe::LayerSets layer_sets_from_json(const json& j) {
    probe::LayerSets sets;
    sets.P = j.at("P").get<std::vector<int>>();
    sets.C = j.at("C").get<std::vector<int>>();
    sets.L_all = j.at("L").get<std::vector<int>>();
    return sets;
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InputError("cannot open file: " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw InputError("malformed JSON in " + path + ": " + e.what());
    }
    return j;
}

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void write_text_file(const fs::path& path, const std::string& text) {
    io::write_file_text(path.string(), text);
}

// ----------------------------------------------------------- model creation

mmdit::Model build_model(const json& manifest) {
    const mmdit::ModelConfig cfg = config_from_json(manifest.at("config"));
    if (!manifest.at("weights").is_null()) {
        const std::string path = manifest.at("weights").get<std::string>();
        std::ifstream f(path, std::ios::binary);
        if (!f) throw InputError("cannot open weights file: " + path);
        mmdit::Model m = mmdit::load_model(f);
        // the manifest's sampling-surface fields still apply
        m.cfg.steps_T = cfg.steps_T;
        m.cfg.guidance_scale = cfg.guidance_scale;
        return m;
    }
    return mmdit::init_model(cfg, manifest.at("model_seed").get<std::uint64_t>());
}

fs::path ensure_outdir(const json& manifest) {
    const fs::path out = manifest.at("out").get<std::string>();
    fs::create_directories(out);
    return out;
}

void write_run_json(const json& manifest, const fs::path& outdir) {
    write_text_file(outdir / "run.json", manifest.dump(2) + "\n");
}

// ------------------------------------------------------------------- probe

int cmd_probe(const json& manifest) {
    const fs::path outdir = ensure_outdir(manifest);
    const json& params = manifest.at("params");

    const std::string corpus_path = params.at("corpus").get<std::string>();
    if (!fs::exists(corpus_path)) throw InputError("prompt corpus not found: " + corpus_path);
    const auto prompts = probe::parse_corpus(io::read_file_text(corpus_path));
    if (prompts.empty()) throw InputError("prompt corpus is empty: " + corpus_path);

    mmdit::Model model = build_model(manifest);
    probe::ProbeSpec spec;
    spec.prompts = prompts;
    spec.seeds = params.at("seeds").get<std::vector<std::uint64_t>>();
    for (const auto& m : params.at("manipulations"))
        spec.manipulations.push_back(rope::manipulation_from_string(m.get<std::string>()));
    spec.layers = params.at("layers").get<std::vector<int>>();

    const int jobs = manifest.at("jobs").get<int>();
    const probe::ProbeReport report = probe::run_probe(model, spec, jobs);

    write_text_file(outdir / "rows.csv", probe::rows_csv(report));
    write_text_file(outdir / "aggregate.csv", probe::aggregate_csv(report));
    write_text_file(outdir / "scatter.csv", probe::scatter_csv(report));
    write_run_json(manifest, outdir);
    std::cout << "probe: " << report.rows.size() << " rows -> " << outdir.string() << "\n";
    return 0;
}

// ---------------------------------------------------------------- classify

int cmd_classify(const json& manifest) {
    const fs::path outdir = ensure_outdir(manifest);
    const json& params = manifest.at("params");
    const std::string agg_path = params.at("aggregate").get<std::string>();
    if (!fs::exists(agg_path)) throw InputError("aggregate CSV not found: " + agg_path);
    const auto means = probe::parse_aggregate_csv(io::read_file_text(agg_path));
    const probe::LayerSets sets = probe::classify_layers(
        means, params.at("p_frac").get<double>(), params.at("c_frac").get<double>());
    write_text_file(outdir / "layer_sets.json", layer_sets_to_json(sets).dump(2) + "\n");
    write_run_json(manifest, outdir);
    std::cout << "classify: |P|=" << sets.P.size() << " |C|=" << sets.C.size() << " -> "
              << outdir.string() << "\n";
    return 0;
}

// -------------------------------------------------------------------- edit

void write_mask(const fs::path& path, const masks::BinaryMask& m) {
    write_text_file(path, masks::write_pbm(m));
}

// Mapped preserved-region PSNR for movement/outpainting: source cell values
// against the cells they were transported to.
double mapped_psnr(const mmdit::ImageGrid& src, const mmdit::ImageGrid& edit,
                   const std::vector<std::pair<int, int>>& pairs) {
    double mse = 0.0;
    std::size_t n = 0;
    for (const auto& [from, to] : pairs) {
        for (int ch = 0; ch < src.channels; ++ch) {
            const double d =
                static_cast<double>(src.values[static_cast<std::size_t>(from) * src.channels + ch]) -
                edit.values[static_cast<std::size_t>(to) * edit.channels + ch];
            mse += d * d;
            ++n;
        }
    }
    if (n == 0) throw EmptyMaskError("mapped psnr: no preserved cells");
    mse /= static_cast<double>(n);
    if (mse == 0.0) return probe::kPsnrCapDb;
    return std::min(probe::kPsnrCapDb, 10.0 * std::log10(1.0 / mse));
}

int cmd_edit(const json& manifest) {
    const fs::path outdir = ensure_outdir(manifest);
    const json& params = manifest.at("params");
    const std::string task = params.at("task").get<std::string>();
    const std::string p_src = params.at("prompt_src").get<std::string>();
    const std::string p_edit = params.at("prompt_edit").get<std::string>();
    const auto seed = manifest.at("seed").get<std::uint64_t>();

    mmdit::Model model = build_model(manifest);
    const mmdit::ModelConfig& cfg = model.cfg;

    editing::TaskParams tp;
    tp.reasoning_steps = params.at("reasoning_steps").get<int>();
    tp.blend_steps = params.at("blend_steps").get<int>();
    tp.threshold = params.at("threshold").get<double>();
    tp.sample_points = params.at("sample_points").get<int>();
    tp.connectivity = params.at("connectivity").get<int>();
    tp.head_average = params.at("head_average").get<bool>();

    probe::LayerSets sets;
    const bool needs_sets = task == "object_addition" || task == "non_rigid" ||
                            task == "background" ||
                            (task == "move" && params.at("object_mask").is_null());
    if (needs_sets) {
        if (params.at("layer_sets").is_null()) {
            throw InputError("task '" + task + "' needs --layer-sets (a classify output)");
        }
        sets = layer_sets_from_json(load_json_file(params.at("layer_sets").get<std::string>()));
    }

    editing::EditResult result;
    if (task == "object_addition") {
        result = editing::edit_object_addition(model, p_src, p_edit,
                                               params.at("object_token_index").get<int>(), seed,
                                               sets.P, tp);
    } else if (task == "non_rigid") {
        result = editing::edit_non_rigid(model, p_src, p_edit, seed, sets.C, tp);
    } else if (task == "background") {
        const std::string refiner_name = params.at("refiner").get<std::string>();
        if (refiner_name != "identity") {
            throw InputError("unknown mask refiner '" + refiner_name + "' (available: identity)");
        }
        masks::IdentityRefiner refiner;
        result = editing::edit_background(model, p_src, p_edit, seed, refiner,
                                          params.at("fg_token_index").get<int>(), sets.P, tp);
    } else if (task == "move") {
        editing::MoveMap map;
        map.dr = params.at("move_dr").get<int>();
        map.dc = params.at("move_dc").get<int>();
        if (!params.at("object_mask").is_null()) {
            map.object =
                masks::read_pbm(io::read_file_text(params.at("object_mask").get<std::string>()));
            if (map.object.h != cfg.grid_h || map.object.w != cfg.grid_w) {
                throw InputError("object mask does not match the token grid");
            }
        } else {
            map.object = editing::reason_object_mask(
                model, p_src, seed, params.at("object_token_index").get<int>(), sets.P, tp);
        }
        result = editing::edit_move(model, p_src, p_edit, seed, map, tp);
    } else if (task == "outpaint") {
        editing::PasteMap map;
        map.row = params.at("paste_row").get<int>();
        map.col = params.at("paste_col").get<int>();
        map.src_h = params.at("src_h").get<int>();
        map.src_w = params.at("src_w").get<int>();
        result = editing::edit_outpaint(model, p_src, p_edit, seed, map, tp);
    } else {
        throw InputError("unknown edit task '" + task +
                         "' (object_addition, non_rigid, background, move, outpaint)");
    }

    // outputs
    {
        std::ofstream f(outdir / "x_src.ppm", std::ios::binary);
        mmdit::write_ppm(result.x_src, f);
    }
    {
        std::ofstream f(outdir / "x_edit.ppm", std::ios::binary);
        mmdit::write_ppm(result.x_edit, f);
    }

    json meta{{"task", task},
              {"prompt_src", p_src},
              {"prompt_edit", p_edit},
              {"seed", seed},
              {"steps_T", cfg.steps_T},
              {"src_traj_checksum", hex64(result.src_traj_checksum)},
              {"edit_traj_checksum", hex64(result.edit_traj_checksum)},
              {"masks", json::object()},
              {"preserved_region_psnr_db", nullptr}};
    const int T = tp.resolve_T(cfg);
    if (task == "object_addition") meta["reasoning_steps"] = tp.resolve_R(T);
    if (task == "background") {
        meta["reasoning_steps"] = tp.resolve_R(T);
        meta["blend_steps"] = tp.resolve_B(T);
    }
    if (task == "move" || task == "outpaint") meta["blend_steps"] = tp.resolve_B(T);
    if (task == "object_addition" || task == "background") meta["threshold"] = tp.threshold;

    if (result.object_mask) {
        write_mask(outdir / "mask_object.pbm", *result.object_mask);
        meta["masks"]["object"] = "mask_object.pbm";
    }
    if (result.coarse_fg) {
        write_mask(outdir / "mask_fg_coarse.pbm", *result.coarse_fg);
        meta["masks"]["foreground_coarse"] = "mask_fg_coarse.pbm";
    }
    if (result.refined_fg) {
        write_mask(outdir / "mask_fg_refined.pbm", *result.refined_fg);
        meta["masks"]["foreground_refined"] = "mask_fg_refined.pbm";
    }

    // preserved-region PSNR, task-specific region
    if (task == "object_addition" && result.object_mask) {
        masks::BinaryMask keep = *result.object_mask;
        for (auto& b : keep.bits) b = b ? 0 : 1;  // irrelevant region = complement
        if (keep.count() > 0) {
            meta["preserved_region_psnr_db"] = probe::psnr_masked(result.x_src, result.x_edit, keep);
        }
    } else if (task == "background" && result.refined_fg) {
        meta["preserved_region_psnr_db"] =
            probe::psnr_masked(result.x_src, result.x_edit, *result.refined_fg);
    } else if (task == "move" && result.object_mask) {
        const int dr = params.at("move_dr").get<int>(), dc = params.at("move_dc").get<int>();
        std::vector<std::pair<int, int>> pairs;
        for (int r = 0; r < cfg.grid_h; ++r) {
            for (int c = 0; c < cfg.grid_w; ++c) {
                if (result.object_mask->at(r, c)) {
                    pairs.emplace_back(r * cfg.grid_w + c, (r + dr) * cfg.grid_w + (c + dc));
                }
            }
        }
        if (!pairs.empty()) {
            meta["preserved_region_psnr_db"] = mapped_psnr(result.x_src, result.x_edit, pairs);
        }
    } else if (task == "outpaint") {
        const int row = params.at("paste_row").get<int>(), col = params.at("paste_col").get<int>();
        const int sh = params.at("src_h").get<int>(), sw = params.at("src_w").get<int>();
        std::vector<std::pair<int, int>> pairs;
        for (int r = 0; r < sh; ++r)
            for (int c = 0; c < sw; ++c)
                pairs.emplace_back(r * sw + c, (row + r) * cfg.grid_w + (col + c));
        meta["preserved_region_psnr_db"] = mapped_psnr(result.x_src, result.x_edit, pairs);
    }

    write_text_file(outdir / "metadata.json", meta.dump(2) + "\n");
    write_run_json(manifest, outdir);
    std::cout << "edit(" << task << "): -> " << outdir.string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ invert

int cmd_invert(const json& manifest) {
    const fs::path outdir = ensure_outdir(manifest);
    const json& params = manifest.at("params");
    const std::string latent_path = params.at("latent").get<std::string>();
    if (!fs::exists(latent_path)) throw InputError("latent file not found: " + latent_path);
    if (params.at("prompt").is_null() || params.at("prompt").get<std::string>().empty()) {
        throw InputError("invert needs --prompt");
    }
    const std::string prompt_text = params.at("prompt").get<std::string>();
    const int steps = params.at("steps").get<int>();

    mmdit::Model model = build_model(manifest);
    const mmdit::ModelConfig& cfg = model.cfg;

    mmdit::LatentGrid z0;
    if (latent_path.size() > 4 && latent_path.substr(latent_path.size() - 4) == ".ppm") {
        // lossy convenience path: invert the decode affine on the three PPM
        // channels, zero the rest
        std::ifstream f(latent_path, std::ios::binary);
        const mmdit::PpmImage img = mmdit::read_ppm(f);
        if (img.h != cfg.grid_h || img.w != cfg.grid_w) {
            throw InputError("PPM size does not match the token grid");
        }
        z0 = mmdit::LatentGrid{img.h, img.w, Tensor({img.h * img.w, cfg.channels()})};
        for (int tok = 0; tok < img.h * img.w; ++tok) {
            for (int ch = 0; ch < 3; ++ch) {
                const float v = static_cast<float>(img.rgb[static_cast<std::size_t>(tok) * 3 + ch]) /
                                255.0f;
                z0.values.at(tok, ch) = (v - mmdit::kDecodeShift) / mmdit::kDecodeScale;
            }
        }
    } else {
        std::ifstream f(latent_path, std::ios::binary);
        z0 = mmdit::read_latent(f, cfg.grid_h, cfg.grid_w, cfg.channels());
    }

    const auto prompt = mmdit::encode_prompt(prompt_text, cfg);
    const mmdit::LatentGrid recovered = mmdit::euler_invert(model, z0, prompt, steps);
    {
        std::ofstream f(outdir / "recovered_noise.bin", std::ios::binary);
        mmdit::write_latent(recovered, f);
    }

    json meta{{"latent", latent_path},
              {"steps", steps},
              {"prompt", prompt_text},
              {"recovered_noise", "recovered_noise.bin"},
              {"relative_error", nullptr}};
    if (!params.at("expected_noise").is_null()) {
        const std::string exp_path = params.at("expected_noise").get<std::string>();
        std::ifstream f(exp_path, std::ios::binary);
        if (!f) throw InputError("cannot open expected noise file: " + exp_path);
        const mmdit::LatentGrid expected =
            mmdit::read_latent(f, cfg.grid_h, cfg.grid_w, cfg.channels());
        double err2 = 0.0, ref2 = 0.0;
        for (std::size_t i = 0; i < expected.values.size(); ++i) {
            const double d = static_cast<double>(recovered.values.flat()[i]) -
                             expected.values.flat()[i];
            err2 += d * d;
            ref2 += static_cast<double>(expected.values.flat()[i]) * expected.values.flat()[i];
        }
        meta["relative_error"] = std::sqrt(err2 / ref2);
    }
    write_text_file(outdir / "metadata.json", meta.dump(2) + "\n");
    write_run_json(manifest, outdir);
    std::cout << "invert: steps=" << steps << " -> " << outdir.string() << "\n";
    return 0;
}

// ------------------------------------------------------------------ report

int cmd_report(const json& manifest) {
    const fs::path outdir = ensure_outdir(manifest);
    const json& params = manifest.at("params");
    bool wrote = false;
    if (!manifest.at("preset").is_null()) {
        const presets::Preset preset = presets::by_name(manifest.at("preset").get<std::string>());
        write_text_file(outdir / "layer_sets.json",
                        layer_sets_to_json(preset.reference_sets).dump(2) + "\n");
        wrote = true;
    }
    if (!params.at("rows").is_null()) {
        const std::string rows_path = params.at("rows").get<std::string>();
        if (!fs::exists(rows_path)) throw InputError("rows CSV not found: " + rows_path);
        // re-aggregate a rows CSV
        std::istringstream is(io::read_file_text(rows_path));
        std::string line;
        probe::ProbeReport report;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (line.empty()) continue;
            if (lineno == 1) {
                if (line != "layer,manipulation,prompt_idx,seed,psnr_db") {
                    throw InputError("rows CSV line 1: unexpected header");
                }
                continue;
            }
            probe::ProbeRow row;
            std::vector<std::string> fields;
            std::size_t start = 0;
            // manipulation labels contain commas inside parentheses
            int depth = 0;
            for (std::size_t i = 0; i <= line.size(); ++i) {
                if (i == line.size() || (line[i] == ',' && depth == 0)) {
                    fields.push_back(line.substr(start, i - start));
                    start = i + 1;
                } else if (line[i] == '(') {
                    ++depth;
                } else if (line[i] == ')') {
                    --depth;
                }
            }
            if (fields.size() != 5) {
                throw InputError("rows CSV line " + std::to_string(lineno) + ": expected 5 fields");
            }
            try {
                row.layer = std::stoi(fields[0]);
                row.manipulation = rope::manipulation_from_string(fields[1]);
                row.prompt_idx = std::stoi(fields[2]);
                row.seed = std::stoull(fields[3]);
                row.psnr_db = std::stod(fields[4]);
            } catch (const std::exception&) {
                throw InputError("rows CSV line " + std::to_string(lineno) + ": cannot parse");
            }
            report.rows.push_back(row);
        }
        if (report.rows.empty()) throw InputError("rows CSV has no data rows");
        write_text_file(outdir / "aggregate.csv", probe::aggregate_csv(report));
        write_text_file(outdir / "scatter.csv", probe::scatter_csv(report));
        wrote = true;
    }
    if (!wrote) throw InputError("report needs --preset and/or --rows");
    write_run_json(manifest, outdir);
    std::cout << "report: -> " << outdir.string() << "\n";
    return 0;
}

// --------------------------------------------------------------- dispatch

int execute(const json& manifest) {
    const std::string command = manifest.at("command").get<std::string>();
    if (command == "probe") return cmd_probe(manifest);
    if (command == "classify") return cmd_classify(manifest);
    if (command == "edit") return cmd_edit(manifest);
    if (command == "invert") return cmd_invert(manifest);
    if (command == "report") return cmd_report(manifest);
    throw InputError("unknown command '" + command + "'");
}

}  // namespace

int main(int argc, char* argv[]) {
    CLI::App app{"toy RoPE-MMDiT probing and attention-injection editing"};
    app.require_subcommand(0, 1);

    std::string manifest_path;
    app.add_option("--manifest", manifest_path,
                   "run manifest JSON; overrides every other flag");

    // global flags shared by the subcommands
    std::string config_path, weights_path, out_dir = "out", preset_name;
    std::uint64_t seed = 0, model_seed = 0;
    int jobs = 1, steps_override = 0;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "model config JSON");
        cmd->add_option("--weights", weights_path, "MMDP weights file (else seeded init)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "run seed (initial noise)");
        cmd->add_option("--model-seed", model_seed, "weight init seed");
        cmd->add_option("--jobs", jobs, "worker threads (probe only)");
        cmd->add_option("--preset", preset_name, "named preset: toy, paper-reference");
        cmd->add_option("--steps", steps_override, "override config steps_T");
    };

    // probe
    auto* probe_cmd = app.add_subcommand("probe", "layer-wise positional-dependency sweep");
    std::string corpus_path;
    std::vector<std::uint64_t> probe_seeds;
    std::vector<std::string> manip_labels;
    std::vector<int> probe_layers;
    probe_cmd->add_option("--corpus", corpus_path, "prompt corpus, one prompt per line");
    probe_cmd->add_option("--seeds", probe_seeds, "sampling seeds")->delimiter(',');
    probe_cmd->add_option("--manip", manip_labels,
                          "manipulation (repeatable): remove, shift(dr,dc)");
    probe_cmd->add_option("--layers", probe_layers, "layer indices (default: all)")->delimiter(',');
    add_common(probe_cmd);

    // classify
    auto* classify_cmd = app.add_subcommand("classify", "derive layer sets from aggregate PSNR");
    std::string aggregate_path;
    double p_frac = probe::kDefaultPFrac, c_frac = probe::kDefaultCFrac;
    classify_cmd->add_option("--aggregate", aggregate_path, "aggregate CSV from probe");
    classify_cmd->add_option("--p-frac", p_frac, "fraction of layers for P");
    classify_cmd->add_option("--c-frac", c_frac, "fraction of layers for C");
    add_common(classify_cmd);

    // edit
    auto* edit_cmd = app.add_subcommand("edit", "paired attention-injection editing");
    std::string task, prompt_src, prompt_edit, layer_sets_path, object_mask_path;
    std::string refiner_name = "identity";
    int object_token_index = 0, fg_token_index = 0;
    int reasoning_steps = 0, blend_steps = -1, sample_points = 4, connectivity = 4;
    double threshold = masks::kDefaultBinarizeThreshold;
    bool head_max = false;
    int move_dr = 0, move_dc = 0, paste_row = 0, paste_col = 0, src_h = 0, src_w = 0;
    edit_cmd->add_option("--task", task,
                         "object_addition | non_rigid | background | move | outpaint");
    edit_cmd->add_option("--prompt-src", prompt_src, "source prompt");
    edit_cmd->add_option("--prompt-edit", prompt_edit, "editing prompt");
    edit_cmd->add_option("--layer-sets", layer_sets_path, "layer sets JSON from classify");
    edit_cmd->add_option("--object-token-index", object_token_index,
                         "index of the added/moved object's token");
    edit_cmd->add_option("--fg-token-index", fg_token_index,
                         "index of the foreground token (background task)");
    edit_cmd->add_option("--reasoning-steps", reasoning_steps, "R (0: scaled paper default)");
    edit_cmd->add_option("--blend-steps", blend_steps, "B (-1: scaled paper default)");
    edit_cmd->add_option("--threshold", threshold, "attention mask binarization threshold");
    edit_cmd->add_option("--points", sample_points, "foreground points for the refiner");
    edit_cmd->add_option("--connectivity", connectivity, "mask connectivity: 4 or 8");
    edit_cmd->add_flag("--head-max", head_max, "max over heads instead of mean");
    edit_cmd->add_option("--refiner", refiner_name, "mask refiner (identity)");
    edit_cmd->add_option("--object-mask", object_mask_path, "PBM object mask (move task)");
    edit_cmd->add_option("--move-dr", move_dr, "move offset rows");
    edit_cmd->add_option("--move-dc", move_dc, "move offset cols");
    edit_cmd->add_option("--paste-row", paste_row, "outpaint paste row");
    edit_cmd->add_option("--paste-col", paste_col, "outpaint paste col");
    edit_cmd->add_option("--src-h", src_h, "outpaint source grid height");
    edit_cmd->add_option("--src-w", src_w, "outpaint source grid width");
    add_common(edit_cmd);

    // invert
    auto* invert_cmd = app.add_subcommand("invert", "recover initial noise via inverse Euler");
    std::string latent_path, invert_prompt, expected_noise_path;
    int invert_steps = 0;
    invert_cmd->add_option("--latent", latent_path, "latent file (.bin flat f32 LE, or .ppm)");
    invert_cmd->add_option("--prompt", invert_prompt, "conditioning prompt");
    invert_cmd->add_option("--invert-steps", invert_steps, "inversion steps (default config T)");
    invert_cmd->add_option("--expected-noise", expected_noise_path,
                           "known z_T for round-trip error");
    add_common(invert_cmd);

    // report
    auto* report_cmd = app.add_subcommand("report", "emit presets and CSV aggregates");
    std::string rows_path;
    report_cmd->add_option("--rows", rows_path, "rows CSV to re-aggregate");
    add_common(report_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        json manifest;
        if (!manifest_path.empty()) {
            manifest = load_json_file(manifest_path);
        } else {
            if (app.get_subcommands().empty()) {
                std::cerr << app.help() << "\n";
                return 2;
            }
            CLI::App* sub = app.get_subcommands().front();
            const std::string command = sub->get_name();

            mmdit::ModelConfig cfg;
            presets::Preset preset = presets::toy();
            bool preset_given = !preset_name.empty();
            if (preset_given) preset = presets::by_name(preset_name);
            cfg = preset.config;
            if (!config_path.empty()) cfg = config_from_json(load_json_file(config_path));
            if (steps_override > 0) cfg.steps_T = steps_override;

            manifest["command"] = command;
            manifest["preset"] = preset_given ? json(preset_name) : json(nullptr);
            if (preset_given) {
                json battery = json::array();
                for (const auto& m : preset.battery) battery.push_back(rope::to_string(m));
                manifest["preset_surface"] = json{
                    {"steps_T", preset.config.steps_T},
                    {"guidance_scale", preset.config.guidance_scale},
                    {"threshold", preset.threshold},
                    {"reasoning_steps", preset.reasoning_steps},
                    {"blend_steps", preset.blend_steps},
                    {"manipulation_battery", battery},
                    {"layer_sets", layer_sets_to_json(preset.reference_sets)}};
            } else {
                manifest["preset_surface"] = nullptr;
            }
            manifest["config"] = config_to_json(cfg);
            manifest["config_path"] = config_path.empty() ? json(nullptr) : json(config_path);
            manifest["weights"] = weights_path.empty() ? json(nullptr) : json(weights_path);
            manifest["out"] = out_dir;
            manifest["seed"] = seed;
            manifest["model_seed"] = model_seed;
            manifest["jobs"] = jobs;

            json params = json::object();
            if (command == "probe") {
                params["corpus"] = corpus_path;
                params["seeds"] = probe_seeds.empty() ? std::vector<std::uint64_t>{0} : probe_seeds;
                json manips = json::array();
                if (manip_labels.empty()) {
                    for (const auto& m : probe::default_battery(cfg.grid_h))
                        manips.push_back(rope::to_string(m));
                } else {
                    for (const auto& m : manip_labels)
                        manips.push_back(rope::to_string(rope::manipulation_from_string(m)));
                }
                params["manipulations"] = manips;
                if (probe_layers.empty()) {
                    std::vector<int> all(static_cast<std::size_t>(cfg.layers()));
                    for (int l = 0; l < cfg.layers(); ++l) all[static_cast<std::size_t>(l)] = l;
                    params["layers"] = all;
                } else {
                    params["layers"] = probe_layers;
                }
            } else if (command == "classify") {
                params["aggregate"] = aggregate_path;
                params["p_frac"] = p_frac;
                params["c_frac"] = c_frac;
            } else if (command == "edit") {
                params["task"] = task;
                params["prompt_src"] = prompt_src;
                params["prompt_edit"] = prompt_edit;
                params["layer_sets"] =
                    layer_sets_path.empty() ? json(nullptr) : json(layer_sets_path);
                params["object_token_index"] = object_token_index;
                params["fg_token_index"] = fg_token_index;
                params["reasoning_steps"] = reasoning_steps > 0
                                                ? reasoning_steps
                                                : editing::scaled_reasoning_steps(cfg.steps_T);
                params["blend_steps"] =
                    blend_steps >= 0 ? blend_steps : editing::scaled_blend_steps(cfg.steps_T);
                params["threshold"] = threshold;
                params["sample_points"] = sample_points;
                params["connectivity"] = connectivity;
                params["head_average"] = !head_max;
                params["refiner"] = refiner_name;
                params["object_mask"] =
                    object_mask_path.empty() ? json(nullptr) : json(object_mask_path);
                params["move_dr"] = move_dr;
                params["move_dc"] = move_dc;
                params["paste_row"] = paste_row;
                params["paste_col"] = paste_col;
                params["src_h"] = src_h;
                params["src_w"] = src_w;
            } else if (command == "invert") {
                params["latent"] = latent_path;
                params["prompt"] = invert_prompt.empty() ? json(nullptr) : json(invert_prompt);
                params["steps"] = invert_steps > 0 ? invert_steps : cfg.steps_T;
                params["expected_noise"] =
                    expected_noise_path.empty() ? json(nullptr) : json(expected_noise_path);
            } else if (command == "report") {
                params["rows"] = rows_path.empty() ? json(nullptr) : json(rows_path);
            }
            manifest["params"] = params;
        }
        return execute(manifest);
    } catch (const EmptyMaskError& e) {
        std::cerr << "reasoning failure: " << e.what() << "\n";
        return 3;
    } catch (const InputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const InjectionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed manifest: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
