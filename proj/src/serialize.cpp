#include "cod/serialize.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cod {

namespace {

namespace fs = std::filesystem;

std::string fmt_f32(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_f32le(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  out.push_back(static_cast<char>(bits & 0xff));
  out.push_back(static_cast<char>((bits >> 8) & 0xff));
  out.push_back(static_cast<char>((bits >> 16) & 0xff));
  out.push_back(static_cast<char>((bits >> 24) & 0xff));
}

float read_f32le(const char* p) {
  const auto b = [&](int i) { return static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])); };
  const std::uint32_t bits = b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

// line-based manifest reader
struct LineReader {
  std::istringstream in;
  explicit LineReader(const std::string& s) : in(s) {}
  std::string next() {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("manifest: unexpected end of file");
    return line;
  }
};

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string cond_mode_name(CondMode m) {
  return m == CondMode::TaskVector ? "task_vector" : "return_scalar";
}

CondMode cond_mode_from(const std::string& s) {
  if (s == "task_vector") return CondMode::TaskVector;
  if (s == "return_scalar") return CondMode::ReturnScalar;
  throw std::runtime_error("manifest: unknown cond mode " + s);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

void atomic_write_file(const fs::path& path, const std::string& bytes) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void save_checkpoint(const fs::path& base, const DenoiserParams<float>& params,
                     const CheckpointExtras& extras) {
  const DenoiserConfig& cfg = params.cfg;
  std::string blob;
  std::ostringstream mf;
  mf << "cod-checkpoint v1\n";
  mf << "config_hash " << extras.config_hash << "\n";
  mf << "dataset_hash " << extras.dataset_hash << "\n";
  mf << "task_index " << extras.task_index << "\n";
  mf << "model seq_len=" << cfg.seq_len << " channel_dim=" << cfg.channel_dim
     << " hidden=" << cfg.hidden << " conv_mult=";
  for (std::size_t i = 0; i < cfg.conv_mult.size(); ++i)
    mf << (i ? "," : "") << cfg.conv_mult[i];
  mf << " n_down=" << cfg.n_down << " n_mid=" << cfg.n_mid << " n_up=" << cfg.n_up
     << " cond_dim=" << cfg.cond_dim << " cond_mode=" << cond_mode_name(cfg.cond_mode)
     << " dropout=" << fmt_f64(cfg.dropout_p) << " groups=" << cfg.groups << "\n";
  mf << "lora attached=" << (params.lora_attached ? 1 : 0) << " rank=" << params.lora_rank
     << "\n";
  mf << "normalizers " << extras.normalizers.size() << "\n";
  for (std::size_t i = 0; i < extras.normalizers.size(); ++i) {
    const auto& n = extras.normalizers[i];
    mf << "normalizer " << i << " " << n.mean.size();
    for (int j = 0; j < n.mean.size(); ++j) mf << " " << fmt_f32(n.mean(j));
    for (int j = 0; j < n.std.size(); ++j) mf << " " << fmt_f32(n.std(j));
    mf << "\n";
  }
  mf << "conditions " << extras.conditions.size() << "\n";
  for (std::size_t i = 0; i < extras.conditions.size(); ++i) {
    mf << "condition " << i << " " << extras.conditions[i].size();
    for (int j = 0; j < extras.conditions[i].size(); ++j)
      mf << " " << fmt_f32(extras.conditions[i](j));
    mf << "\n";
  }
  std::ostringstream tensors;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const auto& name = params.tensors.names[i];
    const auto& t = params.tensors.values[i];
    const std::size_t nbytes = static_cast<std::size_t>(t.numel()) * 4;
    tensors << "tensor " << name << " " << t.ndim();
    for (int d : t.shape) tensors << " " << d;
    tensors << " " << offset << " " << nbytes << "\n";
    for (std::int64_t j = 0; j < t.numel(); ++j) append_f32le(blob, t.at(j));
    offset += nbytes;
  }
  mf << "tensors " << params.tensors.size() << " blob_bytes " << blob.size() << "\n";
  mf << tensors.str();

  fs::path manifest = base;
  manifest += ".manifest";
  fs::path blob_path = base;
  blob_path += ".blob";
  atomic_write_file(manifest, mf.str());
  atomic_write_file(blob_path, blob);
}

LoadedCheckpoint load_checkpoint(const fs::path& base) {
  fs::path manifest = base;
  manifest += ".manifest";
  fs::path blob_path = base;
  blob_path += ".blob";
  const std::string mtext = read_file(manifest);
  const std::string blob = read_file(blob_path);
  LineReader lr(mtext);
  if (lr.next() != "cod-checkpoint v1") throw std::runtime_error("not a checkpoint manifest");

  LoadedCheckpoint out;
  auto expect = [&](const std::string& line, const std::string& key) {
    auto toks = split_ws(line);
    if (toks.empty() || toks[0] != key)
      throw std::runtime_error("manifest: expected " + key + ", got: " + line);
    return toks;
  };
  out.extras.config_hash = expect(lr.next(), "config_hash").at(1);
  out.extras.dataset_hash = expect(lr.next(), "dataset_hash").at(1);
  out.extras.task_index = std::stoi(expect(lr.next(), "task_index").at(1));

  DenoiserConfig cfg;
  for (const auto& tok : expect(lr.next(), "model")) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "seq_len") cfg.seq_len = std::stoi(val);
    else if (key == "channel_dim") cfg.channel_dim = std::stoi(val);
    else if (key == "hidden") cfg.hidden = std::stoi(val);
    else if (key == "conv_mult") {
      cfg.conv_mult.clear();
      std::istringstream ms(val);
      std::string part;
      while (std::getline(ms, part, ',')) cfg.conv_mult.push_back(std::stoi(part));
    } else if (key == "n_down") cfg.n_down = std::stoi(val);
    else if (key == "n_mid") cfg.n_mid = std::stoi(val);
    else if (key == "n_up") cfg.n_up = std::stoi(val);
    else if (key == "cond_dim") cfg.cond_dim = std::stoi(val);
    else if (key == "cond_mode") cfg.cond_mode = cond_mode_from(val);
    else if (key == "dropout") cfg.dropout_p = std::stod(val);
    else if (key == "groups") cfg.groups = std::stoi(val);
  }

  auto lora_toks = expect(lr.next(), "lora");
  bool lora_attached = false;
  int lora_rank = 0;
  for (const auto& tok : lora_toks) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "attached") lora_attached = std::stoi(val) != 0;
    if (key == "rank") lora_rank = std::stoi(val);
  }

  const int n_norms = std::stoi(expect(lr.next(), "normalizers").at(1));
  for (int i = 0; i < n_norms; ++i) {
    auto toks = expect(lr.next(), "normalizer");
    const int c = std::stoi(toks.at(2));
    GaussianNormalizer n;
    n.mean.resize(c);
    n.std.resize(c);
    for (int j = 0; j < c; ++j) n.mean(j) = std::stof(toks.at(3 + static_cast<std::size_t>(j)));
    for (int j = 0; j < c; ++j)
      n.std(j) = std::stof(toks.at(3 + static_cast<std::size_t>(c + j)));
    out.extras.normalizers.push_back(std::move(n));
  }
  const int n_conds = std::stoi(expect(lr.next(), "conditions").at(1));
  for (int i = 0; i < n_conds; ++i) {
    auto toks = expect(lr.next(), "condition");
    const int c = std::stoi(toks.at(2));
    Eigen::VectorXf v(c);
    for (int j = 0; j < c; ++j) v(j) = std::stof(toks.at(3 + static_cast<std::size_t>(j)));
    out.extras.conditions.push_back(std::move(v));
  }

  auto tensor_header = expect(lr.next(), "tensors");
  const int n_tensors = std::stoi(tensor_header.at(1));
  const std::size_t blob_bytes = std::stoull(tensor_header.at(3));
  if (blob.size() != blob_bytes)
    throw std::runtime_error("checkpoint: blob is " + std::to_string(blob.size()) +
                             " bytes, manifest says " + std::to_string(blob_bytes));

  out.params.cfg = cfg;
  out.params.lora_attached = lora_attached;
  out.params.lora_rank = lora_rank;
  for (int i = 0; i < n_tensors; ++i) {
    auto toks = expect(lr.next(), "tensor");
    const std::string& name = toks.at(1);
    const int ndim = std::stoi(toks.at(2));
    Shape shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(std::stoi(toks.at(3 + static_cast<std::size_t>(d))));
    const std::size_t offset = std::stoull(toks.at(3 + static_cast<std::size_t>(ndim)));
    const std::size_t nbytes = std::stoull(toks.at(4 + static_cast<std::size_t>(ndim)));
    Tensor<float> t(shape);
    if (offset + nbytes > blob.size())
      throw std::runtime_error("checkpoint: tensor " + name + " extends past the blob");
    if (static_cast<std::size_t>(t.numel()) * 4 != nbytes)
      throw std::runtime_error("checkpoint: byte count mismatch for " + name);
    for (std::int64_t j = 0; j < t.numel(); ++j)
      t.at(j) = read_f32le(blob.data() + offset + static_cast<std::size_t>(j) * 4);
    out.params.tensors.add(name, std::move(t));
  }
  return out;
}

void save_dataset_dir(const fs::path& dir, const TrajectoryDataset& data,
                      const PointDirTask& task, std::uint64_t seed, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir) && !force)
    throw std::runtime_error("output directory " + dir.string() +
                             " is not empty (use --force to overwrite)");
  fs::create_directories(dir);
  std::string blob;
  blob.reserve(static_cast<std::size_t>(data.episodes.size()) * data.L *
               (data.d_s + data.d_a + 1) * 4);
  for (const auto& ep : data.episodes)
    for (int t = 0; t < data.L; ++t) {
      for (int j = 0; j < data.d_s; ++j) append_f32le(blob, ep.states(t, j));
      for (int j = 0; j < data.d_a; ++j) append_f32le(blob, ep.actions(t, j));
      append_f32le(blob, ep.rewards(t));
    }
  std::ostringstream meta;
  meta << "cod-dataset v1\n";
  meta << "task_id " << data.task_id << "\n";
  meta << "angle " << fmt_f64(task.angle) << "\n";
  meta << "dt " << fmt_f64(task.dt) << "\n";
  meta << "v_max " << fmt_f64(task.v_max) << "\n";
  meta << "gain " << fmt_f64(task.gain) << "\n";
  meta << "episode_len " << data.L << "\n";
  meta << "episodes " << data.episodes.size() << "\n";
  meta << "d_s " << data.d_s << "\n";
  meta << "d_a " << data.d_a << "\n";
  meta << "condition " << data.condition.size();
  for (int j = 0; j < data.condition.size(); ++j) meta << " " << fmt_f32(data.condition(j));
  meta << "\n";
  meta << "seed " << seed << "\n";
  meta << "mean_episode_return " << fmt_f64(data.mean_episode_return()) << "\n";
  atomic_write_file(dir / "meta.txt", meta.str());
  atomic_write_file(dir / "transitions.bin", blob);
}

LoadedDataset load_dataset_dir(const fs::path& dir) {
  const std::string meta = read_file(dir / "meta.txt");
  const std::string blob = read_file(dir / "transitions.bin");
  LineReader lr(meta);
  if (lr.next() != "cod-dataset v1") throw std::runtime_error("not a dataset directory");
  LoadedDataset out;
  double angle = 0, dt = 0.1, v_max = 2.0, gain = 5.0;
  int episodes = 0;
  auto get = [&](const std::string& key) {
    auto toks = split_ws(lr.next());
    if (toks.empty() || toks[0] != key)
      throw std::runtime_error("dataset meta: expected " + key);
    return toks;
  };
  out.data.task_id = std::stoi(get("task_id").at(1));
  angle = std::stod(get("angle").at(1));
  dt = std::stod(get("dt").at(1));
  v_max = std::stod(get("v_max").at(1));
  gain = std::stod(get("gain").at(1));
  out.data.L = std::stoi(get("episode_len").at(1));
  episodes = std::stoi(get("episodes").at(1));
  out.data.d_s = std::stoi(get("d_s").at(1));
  out.data.d_a = std::stoi(get("d_a").at(1));
  auto cond = get("condition");
  const int cdim = std::stoi(cond.at(1));
  out.data.condition.resize(cdim);
  for (int j = 0; j < cdim; ++j)
    out.data.condition(j) = std::stof(cond.at(2 + static_cast<std::size_t>(j)));
  out.seed = std::stoull(get("seed").at(1));
  get("mean_episode_return");

  out.task = PointDirTask::from_angle(out.data.task_id, angle, dt, v_max, out.data.L, gain);
  const std::size_t want =
      static_cast<std::size_t>(episodes) * out.data.L * (out.data.d_s + out.data.d_a + 1) * 4;
  if (blob.size() != want)
    throw std::runtime_error("dataset blob is " + std::to_string(blob.size()) +
                             " bytes, expected " + std::to_string(want));
  const char* p = blob.data();
  for (int e = 0; e < episodes; ++e) {
    Episode ep;
    ep.states.resize(out.data.L, out.data.d_s);
    ep.actions.resize(out.data.L, out.data.d_a);
    ep.rewards.resize(out.data.L);
    for (int t = 0; t < out.data.L; ++t) {
      for (int j = 0; j < out.data.d_s; ++j, p += 4) ep.states(t, j) = read_f32le(p);
      for (int j = 0; j < out.data.d_a; ++j, p += 4) ep.actions(t, j) = read_f32le(p);
      ep.rewards(t) = read_f32le(p);
      p += 4;
    }
    out.data.episodes.push_back(std::move(ep));
  }
  out.blob_hash = hex64(fnv1a64(blob));
  return out;
}

std::string continual_log_csv(const ContinualLog& log) {
  std::ostringstream out;
  out << "step,task,p\n";
  for (std::size_t g = 0; g < log.steps.size(); ++g)
    for (int i = 0; i < log.task_count; ++i)
      out << log.steps[g] << "," << i << "," << fmt_f64(log.p[g][static_cast<std::size_t>(i)])
          << "\n";
  return out.str();
}

ContinualLog parse_continual_log_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "step,task,p")
    throw std::runtime_error("continual log csv: bad header: " + line);
  ContinualLog log;
  std::vector<std::pair<long, std::pair<int, double>>> rows;
  int max_task = -1;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string step_s, task_s, p_s;
    if (!std::getline(ls, step_s, ',') || !std::getline(ls, task_s, ',') ||
        !std::getline(ls, p_s))
      throw std::runtime_error("continual log csv: bad row: " + line);
    rows.push_back({std::stol(step_s), {std::stoi(task_s), std::stod(p_s)}});
    max_task = std::max(max_task, std::stoi(task_s));
  }
  log.task_count = max_task + 1;
  long max_step = 0;
  for (auto& r : rows) max_step = std::max(max_step, r.first);
  log.delta = log.task_count > 0 ? max_step / log.task_count : 0;
  // rows arrive grouped by step in emission order
  for (std::size_t i = 0; i < rows.size();) {
    const long step = rows[i].first;
    std::vector<double> scores(static_cast<std::size_t>(log.task_count), 0.0);
    std::size_t j = i;
    for (; j < rows.size() && rows[j].first == step; ++j)
      scores[static_cast<std::size_t>(rows[j].second.first)] = rows[j].second.second;
    if (j - i != static_cast<std::size_t>(log.task_count))
      throw std::runtime_error("continual log csv: incomplete step group at step " +
                               std::to_string(step));
    log.add(step, scores);
    i = j;
  }
  return log;
}

std::string metrics_csv(const MetricReport& r) {
  std::ostringstream out;
  out << "metric,task,value\n";
  out << "P,all," << fmt_f64(r.P) << "\n";
  out << "FT,all," << fmt_f64(r.FT) << "\n";
  out << "F,all," << fmt_f64(r.F) << "\n";
  out << "P+FT-F,all," << fmt_f64(r.combined) << "\n";
  for (std::size_t i = 0; i < r.ft_per_task.size(); ++i)
    out << "FT_i," << i << "," << fmt_f64(r.ft_per_task[i]) << "\n";
  for (std::size_t i = 0; i < r.f_per_task.size(); ++i)
    out << "F_i," << i << "," << fmt_f64(r.f_per_task[i]) << "\n";
  return out.str();
}

std::string train_log_csv(const std::vector<TrainLogEntry>& log) {
  std::ostringstream out;
  out << "step,task,loss,was_rehearsal,rehearsal_task\n";
  for (const auto& e : log)
    out << e.global_step << "," << e.task << "," << fmt_f32(e.loss) << ","
        << (e.was_rehearsal ? 1 : 0) << "," << e.rehearsal_task << "\n";
  return out.str();
}

}  // namespace cod
