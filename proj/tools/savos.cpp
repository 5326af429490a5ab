// savos — synthetic occlusion videos, self-supervised amodal training, and
// the reporting around them. Subcommands: gen-data, train, eval, tta, report.
//
// Exit codes: 0 success, 1 user error (bad flags, configs, missing inputs),
// 2 internal error (generation retry exhaustion, diverged training, bugs).

#include <CLI11.hpp>

#include <algorithm>
#include <array>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "savos/checkpoint.hpp"
#include "savos/common.hpp"
#include "savos/evalkit.hpp"
#include "savos/synthgen.hpp"
#include "savos/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace savos;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kInternalError = 2;

std::string iso_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Relative dataset/run paths live under $SAVOS_LAB_CACHE when it is set.
fs::path resolve_dir(const std::string& given) {
  fs::path p(given);
  if (p.is_relative())
    if (const char* cache = std::getenv("SAVOS_LAB_CACHE")) return fs::path(cache) / p;
  return p;
}

/// One run_manifest.json per run directory; every command appends a record.
void append_run_manifest(const fs::path& dir, const std::string& command,
                         const json& config_snapshot, std::uint64_t seed,
                         const std::string& started) {
  fs::create_directories(dir);
  const fs::path p = dir / "run_manifest.json";
  json doc;
  if (fs::exists(p)) {
    std::ifstream in(p);
    try {
      in >> doc;
    } catch (const json::exception&) {
      throw FormatError("existing run manifest is unreadable: " + p.string());
    }
  }
  if (!doc.contains("runs"))
    doc = json{{"format_version", 1}, {"runs", json::array()}};
  doc["runs"].push_back(json{{"command", command},
                             {"config_snapshot", config_snapshot},
                             {"code_version", SAVOS_VERSION},
                             {"seed", seed},
                             {"started", started},
                             {"finished", iso_now()}});
  std::ofstream out(p);
  out << doc.dump(2) << "\n";
}

/// Config files are one JSON object with optional sections; flags win over
/// file values, and unknown keys anywhere are errors naming the key.
struct ConfigBundle {
  GenConfig gen;
  ModelConfig model;
  TrainConfig train;
  TTAConfig tta;
  bool has_gen = false, has_model = false, has_train = false, has_tta = false;
};

ConfigBundle load_bundle(const std::string& path) {
  ConfigBundle b;
  if (path.empty()) return b;
  std::ifstream in(path);
  if (!in.good()) throw ConfigError("cannot read config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file is not valid JSON: " + std::string(e.what()));
  }
  for (const auto& [key, value] : j.items()) {
    if (key == "gen") {
      b.gen = value.get<GenConfig>();
      b.has_gen = true;
    } else if (key == "model") {
      b.model = value.get<ModelConfig>();
      b.has_model = true;
    } else if (key == "train") {
      b.train = value.get<TrainConfig>();
      b.has_train = true;
    } else if (key == "tta") {
      b.tta = value.get<TTAConfig>();
      b.has_tta = true;
    } else {
      throw ConfigError("unknown config section '" + key + "'");
    }
  }
  return b;
}

OcclusionFilter parse_filter(const std::string& s) {
  const auto colon = s.find(':');
  std::size_t lo_end = 0, hi_end = 0;
  OcclusionFilter f;
  try {
    if (colon == std::string::npos) throw std::invalid_argument("no colon");
    f.lo = std::stod(s.substr(0, colon), &lo_end);
    f.hi = std::stod(s.substr(colon + 1), &hi_end);
  } catch (const std::exception&) {
    throw ConfigError("--filter-occ expects lo:hi, e.g. 0.1:0.7");
  }
  if (lo_end != colon || hi_end != s.size() - colon - 1 || f.lo < 0.0 || f.hi > 1.0 ||
      f.lo > f.hi)
    throw ConfigError("--filter-occ expects 0 <= lo <= hi <= 1");
  return f;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Hand-rolled SVG charts: no styling dependencies, byte-deterministic output.

struct Series {
  std::string name;
  std::string color;
  std::vector<std::array<double, 2>> pts;
};

void write_line_chart(const fs::path& file, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<Series>& series,
                      std::optional<double> marker_x = std::nullopt,
                      const std::string& marker_label = "stop") {
  const double W = 720, H = 440, ml = 64, mr = 20, mt = 44, mb = 52;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series)
    for (const auto& p : s.pts) {
      xmin = std::min(xmin, p[0]);
      xmax = std::max(xmax, p[0]);
      ymin = std::min(ymin, p[1]);
      ymax = std::max(ymax, p[1]);
    }
  if (xmax <= xmin) xmax = xmin + 1.0;
  const double pad = std::max(1e-9, (ymax - ymin) * 0.06);
  ymin -= pad;
  ymax += pad;
  const auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  const auto py = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << title << "</text>\n";
  char buf[256];
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0;
    const double yv = ymin + (ymax - ymin) * i / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
                  px(xv), py(ymin), px(xv), py(ymax));
    svg << buf;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n",
                  px(xmin), py(yv), px(xmax), py(yv));
    svg << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\""
                  " font-size=\"11\">%.4g</text>\n",
                  px(xv), H - mb + 16, xv);
    svg << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-family=\"sans-serif\""
                  " font-size=\"11\">%.4g</text>\n",
                  ml - 6, py(yv) + 4, yv);
    svg << buf;
  }
  svg << "<line x1=\"" << ml << "\" y1=\"" << py(ymin) << "\" x2=\"" << W - mr << "\" y2=\""
      << py(ymin) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << ml << "\" y1=\"" << py(ymin) << "\" x2=\"" << ml << "\" y2=\"" << mt
      << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
      << "</text>\n"
      << "<text x=\"16\" y=\"" << (mt + H - mb) / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\""
      << " transform=\"rotate(-90 16 " << (mt + H - mb) / 2 << ")\">" << y_label << "</text>\n";

  if (marker_x) {
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#c33\""
                  " stroke-dasharray=\"5,4\"/>\n",
                  px(*marker_x), py(ymin), px(*marker_x), double(mt));
    svg << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"11\""
                  " fill=\"#c33\">%s</text>\n",
                  px(*marker_x) + 4, double(mt) + 12, marker_label.c_str());
    svg << buf;
  }

  double legend_y = mt + 8;
  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.6\" points=\"";
    for (const auto& p : s.pts) {
      std::snprintf(buf, sizeof buf, "%.1f,%.1f ", px(p[0]), py(p[1]));
      svg << buf;
    }
    svg << "\"/>\n";
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\""
                  " stroke-width=\"2\"/>\n",
                  W - mr - 130.0, legend_y, W - mr - 106.0, legend_y, s.color.c_str());
    svg << buf;
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" font-family=\"sans-serif\" font-size=\"12\">%s"
                  "</text>\n",
                  W - mr - 100.0, legend_y + 4, s.name.c_str());
    svg << buf;
    legend_y += 18;
  }
  svg << "</svg>\n";
  std::ofstream out(file);
  out << svg.str();
}

void write_bar_chart(const fs::path& file, const std::string& title,
                     const std::vector<std::string>& runs, const std::vector<double>& full,
                     const std::vector<double>& occluded) {
  const double W = 720, H = 440, ml = 64, mr = 20, mt = 44, mb = 72;
  const auto py = [&](double y) { return H - mb - y * (H - mt - mb); };  // IoU axis is [0, 1]
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\""
      << " font-size=\"15\">" << title << "</text>\n";
  char buf[256];
  for (int i = 0; i <= 5; ++i) {
    const double yv = i / 5.0;
    std::snprintf(buf, sizeof buf,
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n"
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\" font-family=\"sans-serif\""
                  " font-size=\"11\">%.1f</text>\n",
                  ml, py(yv), W - mr, py(yv), ml - 6, py(yv) + 4, yv);
    svg << buf;
  }
  const double group_w = (W - ml - mr) / std::max<std::size_t>(1, runs.size());
  const double bar_w = std::min(48.0, group_w / 3.0);
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double cx = ml + group_w * (static_cast<double>(i) + 0.5);
    const double pair[2] = {full[i], occluded[i]};
    const char* colors[2] = {"#4878cf", "#d65f5f"};
    for (int s = 0; s < 2; ++s) {
      const double x = cx + (s == 0 ? -bar_w - 3 : 3);
      std::snprintf(buf, sizeof buf,
                    "<rect x=\"%.1f\" y=\"%.1f\" width=\"%.1f\" height=\"%.1f\" fill=\"%s\"/>\n"
                    "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\""
                    " font-size=\"11\">%.3f</text>\n",
                    x, py(pair[s]), bar_w, py(0) - py(pair[s]), colors[s], x + bar_w / 2,
                    py(pair[s]) - 4, pair[s]);
      svg << buf;
    }
    std::snprintf(buf, sizeof buf,
                  "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\" font-family=\"sans-serif\""
                  " font-size=\"12\">%s</text>\n",
                  cx, H - mb + 18, runs[i].c_str());
    svg << buf;
  }
  svg << "<line x1=\"" << ml << "\" y1=\"" << py(0) << "\" x2=\"" << W - mr << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n"
      << "<rect x=\"" << W - mr - 150 << "\" y=\"" << mt << "\" width=\"12\" height=\"12\""
      << " fill=\"#4878cf\"/><text x=\"" << W - mr - 134 << "\" y=\"" << mt + 10
      << "\" font-family=\"sans-serif\" font-size=\"12\">full</text>\n"
      << "<rect x=\"" << W - mr - 150 << "\" y=\"" << mt + 18 << "\" width=\"12\" height=\"12\""
      << " fill=\"#d65f5f\"/><text x=\"" << W - mr - 134 << "\" y=\"" << mt + 28
      << "\" font-family=\"sans-serif\" font-size=\"12\">occluded</text>\n"
      << "</svg>\n";
  std::ofstream out(file);
  out << svg.str();
}

// ---------------------------------------------------------------------------
// Commands.

int cmd_gen_data(const std::string& out_arg, int count, std::uint64_t seed,
                 const std::string& config_path, bool force) {
  const std::string started = iso_now();
  if (count == 0) {
    std::cerr << "error: nothing to generate (count is 0)\n";
    return kUserError;
  }
  if (count < 0) {
    std::cerr << "error: count must be positive\n";
    return kUserError;
  }
  const ConfigBundle bundle = load_bundle(config_path);
  const GenConfig base = bundle.gen;
  base.validate();

  const fs::path out = resolve_dir(out_arg);
  const bool existed = fs::exists(out);
  if (fs::exists(out / "manifest.json") || fs::exists(out / "videos")) {
    if (!force) {
      std::cerr << "error: " << out.string()
                << " already holds a dataset; pass --force to regenerate it\n";
      return kUserError;
    }
    // --force replaces the dataset but keeps run_manifest.json history.
    fs::remove_all(out / "videos");
    fs::remove(out / "manifest.json");
  }

  try {
    std::vector<VideoSample> samples;
    samples.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
      GenConfig c = base;
      c.seed = video_seed(seed, i);
      samples.push_back(generate_video(c));
    }
    write_dataset(samples, out, seed);
  } catch (...) {
    // No half-written datasets: drop whatever this run managed to put down.
    if (!existed)
      fs::remove_all(out);
    else {
      fs::remove_all(out / "videos");
      fs::remove(out / "manifest.json");
    }
    throw;
  }

  append_run_manifest(out, "gen-data", json{{"gen", base}, {"count", count}}, seed, started);
  std::cout << "wrote " << count << " videos to " << out.string() << "\n";
  return kOk;
}

int cmd_train(const std::string& data_arg, const std::string& out_arg,
              const std::string& config_path, std::optional<std::uint64_t> seed,
              std::optional<int> max_steps, const std::string& ckpt_path, bool force) {
  const std::string started = iso_now();
  const fs::path data = resolve_dir(data_arg);
  if (!fs::exists(data / "manifest.json")) {
    std::cerr << "error: no dataset at " << data.string() << " (missing manifest.json)\n";
    return kUserError;
  }
  const auto dirs = list_video_dirs(data);
  if (dirs.empty()) {
    std::cerr << "error: dataset at " << data.string() << " holds no videos\n";
    return kUserError;
  }

  ConfigBundle bundle = load_bundle(config_path);
  if (seed) bundle.train.seed = *seed;
  if (max_steps) bundle.train.max_steps = *max_steps;

  std::optional<Checkpoint> resume;
  if (!ckpt_path.empty()) {
    resume = load_checkpoint(ckpt_path);
    if (!bundle.has_model) bundle.model = resume->model;  // checkpoint is authoritative
  }
  bundle.model.validate();
  bundle.train.validate();

  const fs::path out = resolve_dir(out_arg);
  if (fs::exists(out / "train_log.csv") && !force) {
    std::cerr << "error: " << out.string()
              << " already holds a training run; pass --force to continue into it\n";
    return kUserError;
  }

  Trainer trainer(bundle.model, bundle.train);
  const VideoProvider provider = [&dirs](int i) {
    return read_video(dirs[static_cast<std::size_t>(i)]);
  };
  const TrainResult res = trainer.train(provider, static_cast<int>(dirs.size()), out.string(),
                                        resume ? &*resume : nullptr);

  append_run_manifest(out, "train",
                      json{{"model", bundle.model}, {"train", bundle.train},
                           {"data", data.string()},
                           {"resumed_from", ckpt_path.empty() ? json() : json(ckpt_path)}},
                      bundle.train.seed, started);

  if (res.aborted_non_finite) {
    std::cerr << "error: training hit a non-finite loss after step " << res.checkpoint.step
              << "; the last good checkpoint is " << (out / "checkpoint_final.svck").string()
              << "\n";
    return kInternalError;
  }
  if (!res.log.empty()) {
    const TrainLogRow& last = res.log.back();
    std::printf("step %llu: total %.6g (l_m %.6g, l_c %.6g)\n",
                static_cast<unsigned long long>(last.step), last.total, last.l_m, last.l_c);
  }
  std::cout << "checkpoint: " << (out / "checkpoint_final.svck").string() << "\n"
            << "log:        " << (out / "train_log.csv").string() << "\n";
  return kOk;
}

int cmd_eval(const std::string& data_arg, const std::string& ckpt_path,
             const std::string& baseline, const std::string& filter_str,
             const std::string& out_arg) {
  const std::string started = iso_now();
  const fs::path data = resolve_dir(data_arg);
  if (!fs::exists(data / "manifest.json")) {
    std::cerr << "error: no dataset at " << data.string() << "\n";
    return kUserError;
  }
  if (baseline == "model" && ckpt_path.empty()) {
    std::cerr << "error: evaluating the model needs --checkpoint (or use --baseline convex)\n";
    return kUserError;
  }

  std::optional<OcclusionFilter> filter;
  if (!filter_str.empty()) filter = parse_filter(filter_str);

  std::optional<SavosNet<float>> net;
  Checkpoint cp;
  if (baseline == "model") {
    cp = load_checkpoint(ckpt_path);
    net.emplace(cp.model);
    restore(cp, *net);
  }

  // Object-frames from every video pooled into one table.
  std::vector<std::vector<MaskU8>> preds, amodal, visible;
  for (const auto& dir : list_video_dirs(data)) {
    const VideoSample video = read_video(dir);
    std::vector<std::vector<MaskU8>> p;
    if (net) {
      p = predict_video(*net, video);
    } else {
      p.resize(static_cast<std::size_t>(video.T()));
      for (int t = 0; t < video.T(); ++t)
        for (int k = 0; k < video.K(); ++k)
          p[static_cast<std::size_t>(t)].push_back(convex_baseline(video.visible[t][k]));
    }
    preds.insert(preds.end(), p.begin(), p.end());
    amodal.insert(amodal.end(), video.amodal.begin(), video.amodal.end());
    visible.insert(visible.end(), video.visible.begin(), video.visible.end());
  }

  const MetricsTable table = evaluate(preds, amodal, visible, filter ? &*filter : nullptr);
  std::cout << format_text(table);

  if (!out_arg.empty()) {
    const fs::path out = resolve_dir(out_arg);
    fs::create_directories(out);
    json j = table;
    j["baseline"] = baseline;
    std::ofstream(out / "metrics.json") << j.dump(2) << "\n";
    std::ofstream(out / "buckets.csv") << bucket_csv(table);
    append_run_manifest(out, "eval",
                        json{{"data", data.string()},
                             {"baseline", baseline},
                             {"checkpoint", ckpt_path.empty() ? json() : json(ckpt_path)},
                             {"filter", filter_str.empty() ? json() : json(filter_str)}},
                        0, started);
    std::cout << "metrics: " << (out / "metrics.json").string() << "\n";
  }
  return kOk;
}

int cmd_tta(const std::string& data_arg, const std::string& ckpt_path,
            const std::string& config_path, std::optional<double> stop_delta,
            std::optional<int> stop_window, std::optional<int> max_iters,
            const std::string& out_arg) {
  const std::string started = iso_now();
  ConfigBundle bundle = load_bundle(config_path);
  TTAConfig cfg = bundle.tta;
  if (stop_delta) cfg.stop_delta = *stop_delta;
  if (stop_window) cfg.stop_window = *stop_window;
  if (max_iters) cfg.max_iters = *max_iters;
  cfg.validate();

  const Checkpoint cp = load_checkpoint(ckpt_path);

  const fs::path data = resolve_dir(data_arg);
  std::vector<fs::path> video_dirs;
  if (fs::exists(data / "videos"))
    video_dirs = list_video_dirs(data);
  else if (fs::exists(data / "manifest.json"))
    video_dirs = {data};
  else {
    std::cerr << "error: " << data.string() << " is neither a video nor a dataset directory\n";
    return kUserError;
  }

  fs::path out;
  if (!out_arg.empty()) {
    out = resolve_dir(out_arg);
    fs::create_directories(out);
  }

  std::ofstream summary;
  if (!out_arg.empty()) {
    summary.open(out / "tta_summary.csv");
    summary << "video,stop_iteration,stop_reason,full_before,full_after,occluded_before,"
               "occluded_after\n";
  }

  std::vector<double> occ_before, occ_after;
  for (const auto& dir : video_dirs) {
    const VideoSample video = read_video(dir);
    const std::string name = dir.filename().string();

    SavosNet<float> net(cp.model);
    restore(cp, net);
    const MetricsTable before = evaluate(predict_video(net, video), video.amodal, video.visible);

    const TTAResult res = test_time_adapt(cp, video, cfg);
    const MetricsTable after = evaluate(res.predictions, video.amodal, video.visible);
    if (res.warning_non_finite)
      std::cerr << "warning: " << name
                << ": adaptation hit a non-finite loss; keeping pre-adaptation predictions\n";

    std::printf(
        "%s: occluded %.4f -> %.4f, full %.4f -> %.4f, stopped after %d iterations (%s)\n",
        name.c_str(), before.occluded_miou, after.occluded_miou, before.full_miou,
        after.full_miou, res.stop_iteration, res.stop_reason.c_str());
    occ_before.push_back(before.occluded_miou);
    occ_after.push_back(after.occluded_miou);

    if (!out_arg.empty()) {
      char row[256];
      std::snprintf(row, sizeof row, "%s,%d,%s,%.9g,%.9g,%.9g,%.9g\n", name.c_str(),
                    res.stop_iteration, res.stop_reason.c_str(), before.full_miou,
                    after.full_miou, before.occluded_miou, after.occluded_miou);
      summary << row;
      std::ofstream curve(out / ("tta_curve_" + name + ".csv"));
      curve << "iteration,visible_iou,occluded_iou\n";
      for (std::size_t i = 0; i < res.visible_iou.size(); ++i) {
        std::snprintf(row, sizeof row, "%zu,%.9g,%.9g\n", i, res.visible_iou[i],
                      res.occluded_iou[i]);
        curve << row;
      }
    }
  }

  if (video_dirs.size() > 1) {
    std::printf("aggregate over %zu videos: occluded median %.4f -> %.4f, mean %.4f -> %.4f\n",
                video_dirs.size(), median(occ_before), median(occ_after),
                std::accumulate(occ_before.begin(), occ_before.end(), 0.0) / occ_before.size(),
                std::accumulate(occ_after.begin(), occ_after.end(), 0.0) / occ_after.size());
  }
  if (!out_arg.empty()) {
    json agg{{"videos", video_dirs.size()},
             {"occluded_before_median", median(occ_before)},
             {"occluded_after_median", median(occ_after)}};
    std::ofstream(out / "tta_aggregate.json") << agg.dump(2) << "\n";
    append_run_manifest(out, "tta",
                        json{{"tta", cfg}, {"data", data.string()}, {"checkpoint", ckpt_path}},
                        0, started);
    std::cout << "summary: " << (out / "tta_summary.csv").string() << "\n";
  }
  return kOk;
}

int cmd_report(const std::vector<std::string>& run_args, const std::string& out_arg) {
  const fs::path out = resolve_dir(out_arg);
  fs::create_directories(out);

  std::vector<std::string> eval_names;
  std::vector<double> eval_full, eval_occ;
  std::vector<int> eval_n;

  for (const std::string& arg : run_args) {
    const fs::path dir = resolve_dir(arg);
    const std::string name = dir.filename().string();

    const fs::path log = dir / "train_log.csv";
    if (fs::exists(log)) {
      std::ifstream in(log);
      std::string line;
      std::getline(in, line);  // header
      Series lm{"l_m", "#4878cf", {}}, lc{"l_c", "#6acc65", {}}, tot{"total", "#d65f5f", {}};
      while (std::getline(in, line)) {
        unsigned long long step = 0;
        double a = 0, b = 0, c = 0, w = 0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf,%lf", &step, &a, &b, &c, &w) == 5) {
          lm.pts.push_back({double(step), a});
          lc.pts.push_back({double(step), b});
          tot.pts.push_back({double(step), c});
        }
      }
      if (tot.pts.empty()) {
        std::cerr << "warning: " << log.string() << " has no rows; skipped\n";
      } else {
        const fs::path img = out / ("loss_" + name + ".svg");
        write_line_chart(img, "training loss — " + name, "step", "loss", {tot, lm, lc});
        std::cout << "wrote " << img.string() << "\n";
      }
    }

    std::vector<fs::path> curve_files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string fname = entry.path().filename().string();
      if (fname.rfind("tta_curve_", 0) == 0 && entry.path().extension() == ".csv")
        curve_files.push_back(entry.path());
    }
    std::sort(curve_files.begin(), curve_files.end());
    for (const auto& curve_path : curve_files) {
      std::ifstream in(curve_path);
      std::string line;
      std::getline(in, line);
      Series vis{"visible", "#4878cf", {}}, occ{"occluded", "#d65f5f", {}};
      while (std::getline(in, line)) {
        unsigned long long it = 0;
        double v = 0, o = 0;
        if (std::sscanf(line.c_str(), "%llu,%lf,%lf", &it, &v, &o) == 3) {
          vis.pts.push_back({double(it), v});
          occ.pts.push_back({double(it), o});
        }
      }
      if (vis.pts.empty()) {
        std::cerr << "warning: " << curve_path.string() << " has no rows; skipped\n";
        continue;
      }
      const std::string stem = curve_path.stem().string().substr(std::size("tta_curve_") - 1);
      const fs::path img = out / ("tta_" + name + "_" + stem + ".svg");
      write_line_chart(img, "test-time adaptation — " + stem, "iteration", "IoU", {vis, occ},
                       vis.pts.back()[0]);
      std::cout << "wrote " << img.string() << "\n";
    }

    const fs::path metrics = dir / "metrics.json";
    if (fs::exists(metrics)) {
      json j;
      std::ifstream in(metrics);
      try {
        in >> j;
      } catch (const json::exception&) {
        std::cerr << "warning: " << metrics.string() << " is unreadable; skipped\n";
        continue;
      }
      eval_names.push_back(name);
      eval_full.push_back(j.value("full_miou", 0.0));
      eval_occ.push_back(j.value("occluded_miou", 0.0));
      eval_n.push_back(j.value("n_objects", 0));
    }
  }

  if (!eval_names.empty()) {
    std::ofstream csv(out / "comparison.csv");
    csv << "run,full_miou,occluded_miou,n_objects\n";
    for (std::size_t i = 0; i < eval_names.size(); ++i) {
      char row[256];
      std::snprintf(row, sizeof row, "%s,%.9g,%.9g,%d\n", eval_names[i].c_str(), eval_full[i],
                    eval_occ[i], eval_n[i]);
      csv << row;
    }
    std::cout << "wrote " << (out / "comparison.csv").string() << "\n";
    if (eval_names.size() >= 2) {
      write_bar_chart(out / "comparison.svg", "mean IoU by run", eval_names, eval_full,
                      eval_occ);
      std::cout << "wrote " << (out / "comparison.svg").string() << "\n";
    }
  }
  return kOk;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUserError;
  } catch (const GenerationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInternalError;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic occlusion videos and self-supervised amodal segmentation"};
  app.set_version_flag("--version", std::string("savos ") + SAVOS_VERSION);
  app.require_subcommand(1);

  std::string config_path, data_arg, out_arg, ckpt_path, baseline = "model", filter_str;
  std::uint64_t gen_seed = 0;
  int count = 0;
  bool force = false;
  std::optional<std::uint64_t> seed_opt;
  std::optional<int> max_steps_opt, stop_window_opt, max_iters_opt;
  std::optional<double> stop_delta_opt;
  std::vector<std::string> run_dirs;

  auto* gen = app.add_subcommand("gen-data", "generate a video dataset with ground truth");
  gen->add_option("--out", out_arg, "dataset directory")->required();
  gen->add_option("--count", count, "number of videos")->required();
  gen->add_option("--seed", gen_seed, "dataset seed (per-video seeds derive from it)");
  gen->add_option("--config", config_path, "JSON config with a \"gen\" section");
  gen->add_flag("--force", force, "regenerate into a non-empty directory");

  auto* train = app.add_subcommand("train", "self-supervised training on a dataset");
  train->add_option("--data", data_arg, "dataset directory")->required();
  train->add_option("--out", out_arg, "run directory for logs and checkpoints")->required();
  train->add_option("--config", config_path, "JSON config with \"model\"/\"train\" sections");
  train->add_option("--seed", seed_opt, "override the training seed");
  train->add_option("--max-steps", max_steps_opt, "override the optimizer step budget");
  train->add_option("--checkpoint", ckpt_path, "resume from this checkpoint");
  train->add_flag("--force", force, "continue into a directory that already has a run");

  auto* eval = app.add_subcommand("eval", "mean-IoU metrics over a dataset");
  eval->add_option("--data", data_arg, "dataset directory")->required();
  eval->add_option("--checkpoint", ckpt_path, "model checkpoint (unless --baseline convex)");
  eval->add_option("--baseline", baseline, "what to evaluate: model or convex")
      ->check(CLI::IsMember({"model", "convex"}));
  eval->add_option("--filter-occ", filter_str, "keep object-frames with occlusion in lo:hi");
  eval->add_option("--out", out_arg, "directory for metrics.json and buckets.csv");

  auto* tta = app.add_subcommand("tta", "adapt a checkpoint to test videos, one at a time");
  tta->add_option("--checkpoint", ckpt_path, "base checkpoint")->required();
  tta->add_option("--data", data_arg, "one video directory, or a dataset for batch mode")
      ->required();
  tta->add_option("--config", config_path, "JSON config with a \"tta\" section");
  tta->add_option("--stop-delta", stop_delta_opt, "required visible-IoU gain per window");
  tta->add_option("--stop-window", stop_window_opt, "early-stop window (iterations)");
  tta->add_option("--max-steps", max_iters_opt, "adaptation iteration budget");
  tta->add_option("--out", out_arg, "directory for summary and per-video curves");

  auto* report = app.add_subcommand("report", "render plots and tables from run directories");
  report->add_option("dirs", run_dirs, "run directories to scan")->required();
  report->add_option("--out", out_arg, "directory for images and tables")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUserError;
  }

  if (gen->parsed())
    return guarded([&] { return cmd_gen_data(out_arg, count, gen_seed, config_path, force); });
  if (train->parsed())
    return guarded([&] {
      return cmd_train(data_arg, out_arg, config_path, seed_opt, max_steps_opt, ckpt_path,
                       force);
    });
  if (eval->parsed())
    return guarded(
        [&] { return cmd_eval(data_arg, ckpt_path, baseline, filter_str, out_arg); });
  if (tta->parsed())
    return guarded([&] {
      return cmd_tta(data_arg, ckpt_path, config_path, stop_delta_opt, stop_window_opt,
                     max_iters_opt, out_arg);
    });
  if (report->parsed()) return guarded([&] { return cmd_report(run_dirs, out_arg); });
  return kUserError;
}
