#include "edgeseg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "edgeseg/encode.hpp"
#include "edgeseg/error.hpp"
#include "edgeseg/pnm.hpp"

namespace edgeseg {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorKind::ConfigError, what); }

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used == v.size() && std::isfinite(d)) return d;
  } catch (const std::exception&) {
  }
  config_error("key '" + key + "': '" + v + "' is not a number");
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long i = std::stoll(v, &used);
    if (used == v.size()) return i;
  } catch (const std::exception&) {
  }
  config_error("key '" + key + "': '" + v + "' is not an integer");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  for (std::string item; std::getline(ss, item, ',');) out.push_back(to_double(key, trim(item)));
  return out;
}

Range to_range(const std::string& key, const std::string& v) {
  auto l = to_list(key, v);
  if (l.size() == 1) return {l[0], l[0]};
  if (l.size() == 2) return {l[0], l[1]};
  config_error("key '" + key + "' expects 'lo,hi' or a single value");
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_error("key '" + key + "': '" + v + "' is not a boolean");
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives independent stream seeds from the experiment seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kSplitStream = 1;
constexpr std::uint64_t kInitStream = 2;
constexpr std::uint64_t kShuffleStream = 3;
constexpr std::uint64_t kFoldStream = 4;

std::string range_text(const Range& r) { return format_number(r.lo) + "," + format_number(r.hi); }

}  // namespace

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string_view mode_name(TargetMode mode) { return mode == TargetMode::Regions ? "regions" : "edges"; }

TargetMode parse_mode(std::string_view text) {
  if (text == "regions") return TargetMode::Regions;
  if (text == "edges" || text == "edge_integrated") return TargetMode::Edges;
  config_error("mode must be 'regions' or 'edges', got '" + std::string(text) + "'");
}

// ---------------------------------------------------------------- config

void ExperimentConfig::apply(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "source") {
    if (v == "synthetic") {
      source = DataSource::Synthetic;
    } else if (v == "directory") {
      source = DataSource::Directory;
    } else {
      config_error("source must be 'synthetic' or 'directory'");
    }
  } else if (key == "data_dir") {
    data_dir = v;
  } else if (key == "mapping") {
    mapping = LabelMapping::parse(v);
  } else if (key == "mode") {
    mode = parse_mode(v);
  } else if (key == "split") {
    auto l = to_list(key, v);
    if (l.size() != 3) config_error("split expects three fractions");
    split = {l[0], l[1], l[2]};
  } else if (key == "epochs") {
    epochs = static_cast<int>(to_int(key, v));
  } else if (key == "batch_size") {
    batch_size = static_cast<int>(to_int(key, v));
  } else if (key == "learning_rate") {
    learning_rate = to_double(key, v);
  } else if (key == "adam.fan_in_scaled") {
    adam_fan_in_scaled = to_bool(key, v);
  } else if (key == "gamma") {
    focal.gamma = to_double(key, v);
  } else if (key.rfind("alpha.", 0) == 0) {
    focal.set_alpha(role_from_name(key.substr(6)), to_double(key, v));
  } else if (key == "unet.depth") {
    unet.depth = static_cast<int>(to_int(key, v));
  } else if (key == "unet.base_filters") {
    unet.base_filters = static_cast<int>(to_int(key, v));
  } else if (key == "resolution") {
    resolution = static_cast<int>(to_int(key, v));
  } else if (key == "seed") {
    seed = static_cast<std::uint64_t>(to_int(key, v));
  } else if (key == "folds") {
    folds = static_cast<int>(to_int(key, v));
  } else if (key == "eval.hausdorff") {
    if (v == "region") {
      hausdorff_mode = HausdorffMode::Region;
    } else if (v == "boundary") {
      hausdorff_mode = HausdorffMode::Boundary;
    } else {
      config_error("eval.hausdorff must be 'region' or 'boundary'");
    }
  } else if (key == "eval.native_resolution") {
    eval_native_resolution = to_bool(key, v);
  } else if (key == "out") {
    out_dir = v;
  } else if (key == "synth.count") {
    synth_count = static_cast<int>(to_int(key, v));
  } else if (key == "synth.seed") {
    synth_seed = static_cast<std::uint64_t>(to_int(key, v));
  } else if (key == "synth.size") {
    synth.size = static_cast<int>(to_int(key, v));
  } else if (key == "synth.disc_radius") {
    synth.disc_radius = to_range(key, v);
  } else if (key == "synth.cup_ratio") {
    synth.cup_ratio = to_range(key, v);
  } else if (key == "synth.eccentricity") {
    synth.eccentricity = to_range(key, v);
  } else if (key == "synth.center_jitter") {
    synth.center_jitter = to_double(key, v);
  } else if (key == "synth.cup_offset") {
    synth.cup_offset = to_double(key, v);
  } else if (key == "synth.noise") {
    synth.noise = to_double(key, v);
  } else if (key == "synth.vessels") {
    synth.vessel_count = to_range(key, v);
  } else {
    config_error("unknown config key '" + key + "'");
  }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  int lineno = 0;
  for (std::string line; std::getline(ss, line);) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) config_error("line " + std::to_string(lineno) + " is not key=value");
    cfg.apply(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  const double sum = split[0] + split[1] + split[2];
  if (std::abs(sum - 1.0) > 1e-9) config_error("split fractions must sum to 1");
  for (double f : split)
    if (f < 0.0) config_error("split fractions must be non-negative");
  if (epochs < 1) config_error("epochs must be >= 1");
  if (batch_size < 1) config_error("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) config_error("learning_rate must be > 0");
  if (folds < 2) config_error("folds must be >= 2");
  focal.validate();
  for (auto r : target_roles()) (void)focal.alpha_for(r);
  network().validate();
  if (resolution < 1 || resolution % network().stride() != 0)
    config_error("resolution must be a positive multiple of 2^depth");
  if (source == DataSource::Synthetic) {
    synth.validate();
    if (synth_count < 1) config_error("synth.count must be >= 1");
  } else if (data_dir.empty()) {
    config_error("source=directory needs data_dir");
  }
}

UNetConfig ExperimentConfig::network() const {
  UNetConfig n = unet;
  n.in_channels = 3;
  n.out_channels = mode == TargetMode::Edges ? 5 : 3;
  return n;
}

std::vector<ChannelRole> ExperimentConfig::target_roles() const {
  return mode == TargetMode::Edges ? edge_roles() : region_roles();
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "source=" << (source == DataSource::Synthetic ? "synthetic" : "directory") << '\n';
  if (source == DataSource::Directory) os << "data_dir=" << data_dir.string() << '\n';
  os << "mapping=" << mapping.to_string() << '\n';
  os << "mode=" << mode_name(mode) << '\n';
  os << "split=" << format_number(split[0]) << ',' << format_number(split[1]) << ',' << format_number(split[2])
     << '\n';
  os << "epochs=" << epochs << '\n';
  os << "batch_size=" << batch_size << '\n';
  os << "learning_rate=" << format_number(learning_rate) << '\n';
  os << "adam.fan_in_scaled=" << (adam_fan_in_scaled ? "true" : "false") << '\n';
  os << "gamma=" << format_number(focal.gamma) << '\n';
  for (auto r : edge_roles())
    if (focal.alpha[static_cast<std::size_t>(r)])
      os << "alpha." << role_name(r) << '=' << format_number(*focal.alpha[static_cast<std::size_t>(r)]) << '\n';
  os << "unet.depth=" << unet.depth << '\n';
  os << "unet.base_filters=" << unet.base_filters << '\n';
  os << "resolution=" << resolution << '\n';
  os << "seed=" << seed << '\n';
  os << "folds=" << folds << '\n';
  os << "eval.hausdorff=" << (hausdorff_mode == HausdorffMode::Region ? "region" : "boundary") << '\n';
  os << "eval.native_resolution=" << (eval_native_resolution ? "true" : "false") << '\n';
  if (source == DataSource::Synthetic) {
    os << "synth.count=" << synth_count << '\n';
    os << "synth.seed=" << effective_synth_seed() << '\n';
    os << "synth.size=" << synth.size << '\n';
    os << "synth.disc_radius=" << range_text(synth.disc_radius) << '\n';
    os << "synth.cup_ratio=" << range_text(synth.cup_ratio) << '\n';
    os << "synth.eccentricity=" << range_text(synth.eccentricity) << '\n';
    os << "synth.center_jitter=" << format_number(synth.center_jitter) << '\n';
    os << "synth.cup_offset=" << format_number(synth.cup_offset) << '\n';
    os << "synth.noise=" << format_number(synth.noise) << '\n';
    os << "synth.vessels=" << range_text(synth.vessel_count) << '\n';
  }
  return os.str();
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(to_text()); }

// ---------------------------------------------------------------- data

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.id);
  return out;
}

const DataItem& Dataset::at(const std::string& id) const {
  auto it = std::lower_bound(items.begin(), items.end(), id,
                             [](const DataItem& item, const std::string& key) { return item.id < key; });
  if (it == items.end() || it->id != id) throw Error(ErrorKind::Precondition, "unknown image id '" + id + "'");
  return *it;
}

ChannelStack make_target(const LabelMask& mask, TargetMode mode) {
  return mode == TargetMode::Edges ? build_edge_stack(mask) : one_hot_regions(mask);
}

namespace {

Image2D to_three_channels(const Image2D& img) {
  if (img.channels() == 3) return img;
  std::vector<float> data(img.data().size() * 3);
  for (std::size_t p = 0; p < img.data().size(); ++p)
    for (int c = 0; c < 3; ++c) data[p * 3 + c] = img.data()[p];
  return Image2D(img.height(), img.width(), 3, std::move(data));
}

DataItem make_item(std::string id, const Image2D& image, const LabelMask& mask, const ExperimentConfig& cfg) {
  if (image.height() != mask.height() || image.width() != mask.width())
    throw Error(ErrorKind::ShapeMismatch, "image and mask of '" + id + "' differ in size");
  DataItem item;
  item.id = std::move(id);
  item.image = resize_image_bilinear(to_three_channels(image), cfg.resolution, cfg.resolution);
  item.mask = resize_mask_nearest(mask, cfg.resolution, cfg.resolution);
  item.native_mask = mask;
  item.target = make_target(item.mask, cfg.mode);
  return item;
}

std::vector<DataItem> read_directory(const ExperimentConfig& cfg) {
  if (!fs::is_directory(cfg.data_dir)) throw Error(ErrorKind::Io, "data_dir " + cfg.data_dir.string() + " not found");
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(cfg.data_dir)) {
    const auto name = entry.path().filename().string();
    const std::string suffix = "_mask.pgm";
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.push_back(name.substr(0, name.size() - suffix.size()));
  }
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw Error(ErrorKind::Io, "no *_mask.pgm files in " + cfg.data_dir.string());
  std::vector<DataItem> items;
  for (const auto& id : ids) {
    fs::path img_path = cfg.data_dir / (id + ".ppm");
    if (!fs::exists(img_path)) img_path = cfg.data_dir / (id + ".pgm");
    const auto mask_path = cfg.data_dir / (id + "_mask.pgm");
    LabelMask mask;
    try {
      mask = remap_labels(read_pnm(mask_path), cfg.mapping);
    } catch (const UnmappedValueError& e) {
      throw UnmappedValueError(e.value(), mask_path.string());
    }
    items.push_back(make_item(id, read_pnm(img_path), mask, cfg));
  }
  return items;
}

void write_item(const fs::path& dir, const DataItem& item) {
  const auto mapping = LabelMapping::default_mapping();
  write_pnm(dir / (item.id + ".ppm"), item.image);
  write_pnm(dir / (item.id + "_mask.pgm"), render_labels(item.mask, mapping));
  if (!(item.native_mask == item.mask))
    write_pnm(dir / (item.id + "_native_mask.pgm"), render_labels(item.native_mask, mapping));
  write_stack(dir, item.id + "_target", item.target);
}

}  // namespace

Dataset preprocess(const ExperimentConfig& cfg, const std::optional<fs::path>& write_dir) {
  cfg.validate();
  Dataset data;
  data.mode = cfg.mode;
  if (cfg.source == DataSource::Synthetic) {
    SynthConfig sc = cfg.synth;
    sc.seed = cfg.effective_synth_seed();
    for (int i = 0; i < cfg.synth_count; ++i) {
      auto sample = generate_sample(sc, static_cast<std::uint64_t>(i));
      data.items.push_back(make_item(sample_id(i), sample.image, sample.mask, cfg));
    }
  } else {
    data.items = read_directory(cfg);
  }
  for (const auto& item : data.items)
    if (!item.target.is_one_hot()) throw Error(ErrorKind::Precondition, "target of '" + item.id + "' is not one-hot");

  if (write_dir) {
    fs::create_directories(*write_dir);
    std::ofstream manifest(*write_dir / "manifest.tsv", std::ios::trunc);
    if (!manifest) throw Error(ErrorKind::Io, "cannot write preprocessed manifest");
    manifest << "# config_hash " << hex64(cfg.hash()) << '\n';
    manifest << "# mode " << mode_name(cfg.mode) << '\n';
    for (const auto& item : data.items) {
      write_item(*write_dir, item);
      manifest << item.id << '\t' << item.id << ".ppm\t" << item.id << "_mask.pgm\t" << item.id << "_target\t"
               << item.native_mask.height() << '\t' << item.native_mask.width() << '\n';
    }
  }
  return data;
}

namespace {

std::optional<std::string> manifest_hash(const fs::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  std::string line;
  if (!in || !std::getline(in, line) || line.rfind("# config_hash ", 0) != 0) return std::nullopt;
  return line.substr(14);
}

}  // namespace

Dataset load_preprocessed(const fs::path& dir) {
  std::ifstream in(dir / "manifest.tsv");
  if (!in) throw Error(ErrorKind::Io, "no preprocessed manifest in " + dir.string());
  Dataset data;
  const auto mapping = LabelMapping::default_mapping();
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("# mode ", 0) == 0) {
      data.mode = parse_mode(line.substr(7));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string id, image, mask, target;
    std::getline(ss, id, '\t');
    std::getline(ss, image, '\t');
    std::getline(ss, mask, '\t');
    std::getline(ss, target, '\t');
    DataItem item;
    item.id = id;
    item.image = read_pnm(dir / image);
    item.mask = remap_labels(read_pnm(dir / mask), mapping);
    const auto native = dir / (id + "_native_mask.pgm");
    item.native_mask = fs::exists(native) ? remap_labels(read_pnm(native), mapping) : item.mask;
    item.target = read_stack(dir, target);
    data.items.push_back(std::move(item));
  }
  std::sort(data.items.begin(), data.items.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  if (data.items.empty()) throw Error(ErrorKind::Io, "preprocessed manifest in " + dir.string() + " lists no items");
  return data;
}

Dataset prepare_dataset(const ExperimentConfig& cfg, const fs::path& dir) {
  if (auto h = manifest_hash(dir); h && *h == hex64(cfg.hash())) return load_preprocessed(dir);
  return preprocess(cfg, dir);
}

// ---------------------------------------------------------------- splits

SplitIds split(const std::vector<std::string>& ids, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(sum - 1.0) > 1e-9) config_error("split fractions must sum to 1");
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(derive_seed(seed, kSplitStream));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<long long>(order.size());
  const auto n_train = std::llround(fractions[0] * static_cast<double>(n));
  const auto n_val = std::llround(fractions[1] * static_cast<double>(n));
  const auto n_test = n - n_train - n_val;
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw Error(ErrorKind::TooFewSamples, std::to_string(n) + " samples cannot fill a train/val/test split");
  SplitIds out;
  out.train.assign(order.begin(), order.begin() + n_train);
  out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
  out.test.assign(order.begin() + n_train + n_val, order.end());
  return out;
}

FoldPlan make_folds(const std::vector<std::string>& ids, int k, std::uint64_t seed) {
  if (k < 2) config_error("fold count must be >= 2");
  if (static_cast<int>(ids.size()) < k)
    throw Error(ErrorKind::TooFewSamples, std::to_string(ids.size()) + " samples cannot fill " +
                                              std::to_string(k) + " folds");
  std::vector<std::string> order = ids;
  std::mt19937_64 rng(derive_seed(seed, kFoldStream));
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.folds.resize(k);
  for (std::size_t i = 0; i < order.size(); ++i) plan.folds[i % k].push_back(order[i]);
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

std::vector<std::string> FoldPlan::training_ids(int fold) const {
  std::vector<std::string> out;
  for (int f = 0; f < k; ++f)
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------- training

namespace {

struct Batch {
  Tensor4<float> images;
  Tensor4<float> targets;
};

Batch make_batch(const Dataset& data, const std::vector<std::string>& ids, std::size_t begin, std::size_t end) {
  std::vector<Image2D> images;
  std::vector<ChannelStack> targets;
  for (std::size_t i = begin; i < end; ++i) {
    const auto& item = data.at(ids[i]);
    images.push_back(item.image);
    targets.push_back(item.target);
  }
  return {images_to_tensor(images), stacks_to_tensor(targets)};
}

void check_mode(const ExperimentConfig& cfg, const Dataset& data) {
  if (data.mode != cfg.mode) config_error("dataset was preprocessed for a different target mode");
}

}  // namespace

double dataset_loss(const ExperimentConfig& cfg, const ModelParams<float>& params, const Dataset& data,
                    const std::vector<std::string>& ids) {
  check_mode(cfg, data);
  if (ids.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto net = cfg.network();
  const auto roles = cfg.target_roles();
  double total = 0.0;
  for (std::size_t b = 0; b < ids.size(); b += cfg.batch_size) {
    const std::size_t e = std::min(ids.size(), b + static_cast<std::size_t>(cfg.batch_size));
    const auto batch = make_batch(data, ids, b, e);
    auto [probs, cache] = forward(params, net, batch.images);
    const double loss = focal_loss_raw<float>(probs.data, batch.targets.data, roles, probs.plane(), cfg.focal);
    total += loss * static_cast<double>(e - b);
  }
  return total / static_cast<double>(ids.size());
}

TrainResult train(const ExperimentConfig& cfg, const Dataset& data, const std::vector<std::string>& train_ids,
                  const std::vector<std::string>& val_ids, const EpochCallback& on_epoch) {
  cfg.validate();
  check_mode(cfg, data);
  if (train_ids.empty()) throw Error(ErrorKind::TooFewSamples, "no training samples");
  TrainResult result;
  result.network = cfg.network();
  const auto roles = cfg.target_roles();

  auto params = init_params<float>(result.network, derive_seed(cfg.seed, kInitStream));
  result.init_checksum = params_checksum(params);
  {
    auto trunk = params;
    trunk.layers.pop_back();
    result.trunk_checksum = params_checksum(trunk);
  }
  auto adam = AdamState<float>::init(params, cfg.adam_fan_in_scaled);
  std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::string> order = train_ids;
  std::sort(order.begin(), order.end());

  double best = std::numeric_limits<double>::infinity();
  result.best_params = params;
  Tensor4<float> grad;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const auto batch = make_batch(data, order, b, e);
      auto [probs, cache] = forward(params, result.network, batch.images);
      grad = Tensor4<float>(probs.n, probs.c, probs.h, probs.w);
      const double loss =
          focal_loss_grad_raw<float>(probs.data, batch.targets.data, roles, probs.plane(), cfg.focal, grad.data);
      if (!std::isfinite(loss))
        throw Error(ErrorKind::Diverged, "non-finite training loss at epoch " + std::to_string(epoch));
      const auto grads = backward(params, result.network, cache, grad);
      adam_update(params, grads, adam, cfg.learning_rate);
      ++result.steps;
      epoch_loss += loss * static_cast<double>(e - b);
    }
    EpochLog row{epoch, epoch_loss / static_cast<double>(order.size()), dataset_loss(cfg, params, data, val_ids)};
    if (!val_ids.empty() && !std::isfinite(row.val_loss))
      throw Error(ErrorKind::Diverged, "non-finite validation loss at epoch " + std::to_string(epoch));
    const double score = val_ids.empty() ? row.train_loss : row.val_loss;
    if (score < best) {
      best = score;
      result.best_params = params;
      result.best_epoch = epoch;
    }
    result.log.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  result.final_params = std::move(params);
  return result;
}

void write_loss_log(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  for (const auto& r : log) out << r.epoch << ',' << format_number(r.train_loss) << ',' << format_number(r.val_loss) << '\n';
}

std::vector<EpochLog> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!in || !std::getline(in, line) || line != "epoch,train_loss,val_loss")
    throw Error(ErrorKind::Io, "bad loss log " + path.string());
  std::vector<EpochLog> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string a, b, c;
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    out.push_back({std::stoi(a), parse_number(b), parse_number(c)});
  }
  return out;
}

// ---------------------------------------------------------------- evaluation

MetricsRecord score_prediction(const std::string& id, const ChannelStack& pred, const DataItem& truth,
                               const ScoreOptions& options) {
  MetricsRecord rec;
  rec.image_id = id;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  DecodedPrediction decoded;
  try {
    decoded = decode_prediction(pred);
  } catch (const Error& e) {
    rec.metrics = {nan, nan, nan, nan, nan};
    rec.flags.push_back(std::string("decode:") + e.what());
    return rec;
  }
  const LabelMask& mask = options.native_resolution ? truth.native_mask : truth.mask;
  if (decoded.disc.height != mask.height() || decoded.disc.width != mask.width()) {
    decoded.disc = resize_plane_nearest(decoded.disc, mask.height(), mask.width());
    decoded.cup = resize_plane_nearest(decoded.cup, mask.height(), mask.width());
  }
  const auto gt_disc = label_plane(mask, {Label::Disc, Label::Cup});
  const auto gt_cup = label_plane(mask, {Label::Cup});

  auto dice = [&](const BinaryPlane& p, const BinaryPlane& t, const char* name) {
    if (p.empty_foreground() && t.empty_foreground()) rec.flags.push_back(std::string(name) + ":empty_both");
    return dice_score(p, t);
  };
  auto hd = [&](const BinaryPlane& p, const BinaryPlane& t, const char* name) {
    try {
      if (p.empty_foreground() != t.empty_foreground()) rec.flags.push_back(std::string(name) + ":sentinel");
      return hausdorff(p, t, options.hausdorff_mode);
    } catch (const Error& e) {
      rec.flags.push_back(std::string(name) + ":" + to_string(e.kind()));
      return nan;
    }
  };
  rec.metrics.dice_disc = dice(decoded.disc, gt_disc, "dice_disc");
  rec.metrics.hausdorff_disc = hd(decoded.disc, gt_disc, "hausdorff_disc");
  rec.metrics.dice_cup = dice(decoded.cup, gt_cup, "dice_cup");
  rec.metrics.hausdorff_cup = hd(decoded.cup, gt_cup, "hausdorff_cup");
  try {
    rec.metrics.cdr = compute_cdr(decoded.disc, decoded.cup);
  } catch (const Error& e) {
    rec.metrics.cdr = nan;
    rec.flags.push_back(std::string("cdr:") + to_string(e.kind()));
  }
  return rec;
}

EvalResult evaluate_predictions(const ExperimentConfig& cfg, const Dataset& data,
                                const std::vector<std::string>& ids, const std::vector<ChannelStack>& predictions) {
  if (ids.size() != predictions.size()) throw Error(ErrorKind::Precondition, "one prediction per id is required");
  if (ids.empty()) throw Error(ErrorKind::EmptyList, "no images to evaluate");
  const ScoreOptions options{cfg.hausdorff_mode, cfg.eval_native_resolution};
  // Records are emitted in id order regardless of the order requested.
  std::vector<std::size_t> order(ids.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return ids[a] < ids[b]; });
  EvalResult result;
  for (auto i : order) result.records.push_back(score_prediction(ids[i], predictions[i], data.at(ids[i]), options));
  result.summary = aggregate(result.records);
  const auto& first = data.at(ids[order[0]]);
  const auto& mask = cfg.eval_native_resolution ? first.native_mask : first.mask;
  result.eval_height = mask.height();
  result.eval_width = mask.width();
  return result;
}

EvalResult evaluate(const ExperimentConfig& cfg, const ModelParams<float>& params, const Dataset& data,
                    const std::vector<std::string>& ids) {
  check_mode(cfg, data);
  const auto net = cfg.network();
  std::vector<ChannelStack> preds;
  preds.reserve(ids.size());
  for (const auto& id : ids) preds.push_back(predict(params, net, data.at(id).image));
  return evaluate_predictions(cfg, data, ids, preds);
}

void write_summary_csv(const fs::path& path, const EvalResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "statistic";
  for (auto* c : MetricsRow::kColumns) out << ',' << c;
  out << ",n,eval_height,eval_width\n";
  auto row = [&](const char* name, const MetricsRow& m) {
    out << name;
    for (double v : m.values()) out << ',' << format_number(v);
    out << ',' << result.records.size() << ',' << result.eval_height << ',' << result.eval_width << '\n';
  };
  row("mean", result.summary.mean);
  row("median", result.summary.median);
}

void write_eval_outputs(const fs::path& dir, const EvalResult& result) {
  fs::create_directories(dir);
  {
    std::ofstream out(dir / "metrics.csv", std::ios::trunc);
    if (!out) throw Error(ErrorKind::Io, "cannot write metrics.csv");
    write_metrics_csv(out, result.records);
  }
  write_summary_csv(dir / "summary.csv", result);
  std::ofstream flags(dir / "flags.csv", std::ios::trunc);
  flags << "image_id,flag\n";
  for (const auto& r : result.records)
    for (const auto& f : r.flags) flags << r.image_id << ',' << f << '\n';
}

// ---------------------------------------------------------------- experiments

CrossvalResult crossval(const ExperimentConfig& cfg, const Dataset& data, int k, const EpochCallback& on_epoch) {
  cfg.validate();
  CrossvalResult result;
  result.plan = make_folds(data.ids(), k, cfg.seed);
  for (int f = 0; f < k; ++f) {
    const auto training = train(cfg, data, result.plan.training_ids(f), {}, on_epoch);
    const auto eval = evaluate(cfg, training.final_params, data, result.plan.folds[f]);
    result.fold_disc_dice.push_back(eval.summary.mean.dice_disc);
  }
  result.average = mean_of(result.fold_disc_dice);
  result.median = median_of(result.fold_disc_dice);
  return result;
}

void write_crossval_csv(const fs::path& path, TargetMode mode, const CrossvalResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "model";
  for (std::size_t f = 0; f < result.fold_disc_dice.size(); ++f) out << ",fold_" << f + 1;
  out << ",average,median\n";
  out << "unet_" << mode_name(mode);
  for (double d : result.fold_disc_dice) out << ',' << format_number(d);
  out << ',' << format_number(result.average) << ',' << format_number(result.median) << '\n';
}

CompareResult compare(const ExperimentConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  ExperimentConfig regions_cfg = cfg;
  regions_cfg.mode = TargetMode::Regions;
  ExperimentConfig edges_cfg = cfg;
  edges_cfg.mode = TargetMode::Edges;
  const auto regions_data = preprocess(regions_cfg);
  const auto edges_data = preprocess(edges_cfg);

  CompareResult out{split(regions_data.ids(), cfg.split, cfg.seed), {}, {}};
  auto run_arm = [&](const ExperimentConfig& c, const Dataset& d) {
    ArmResult arm{c.mode, train(c, d, out.split.train, out.split.val, on_epoch), {}};
    arm.eval = evaluate(c, arm.training.best_params, d, out.split.test);
    return arm;
  };
  out.regions = run_arm(regions_cfg, regions_data);
  out.edges = run_arm(edges_cfg, edges_data);
  return out;
}

void write_compare_csv(const fs::path& path, const CompareResult& result) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "structure,mode,mean_dice,median_dice,mean_hausdorff,median_hausdorff\n";
  const auto& r = result.regions.eval.summary;
  const auto& e = result.edges.eval.summary;
  auto row = [&](const char* structure, const char* mode, double md, double mdd, double mh, double mdh) {
    out << structure << ',' << mode << ',' << format_number(md) << ',' << format_number(mdd) << ','
        << format_number(mh) << ',' << format_number(mdh) << '\n';
  };
  row("disc", "regions", r.mean.dice_disc, r.median.dice_disc, r.mean.hausdorff_disc, r.median.hausdorff_disc);
  row("disc", "edges", e.mean.dice_disc, e.median.dice_disc, e.mean.hausdorff_disc, e.median.hausdorff_disc);
  row("disc", "delta", e.mean.dice_disc - r.mean.dice_disc, e.median.dice_disc - r.median.dice_disc,
      e.mean.hausdorff_disc - r.mean.hausdorff_disc, e.median.hausdorff_disc - r.median.hausdorff_disc);
  row("cup", "regions", r.mean.dice_cup, r.median.dice_cup, r.mean.hausdorff_cup, r.median.hausdorff_cup);
  row("cup", "edges", e.mean.dice_cup, e.median.dice_cup, e.mean.hausdorff_cup, e.median.hausdorff_cup);
  row("cup", "delta", e.mean.dice_cup - r.mean.dice_cup, e.median.dice_cup - r.median.dice_cup,
      e.mean.hausdorff_cup - r.mean.hausdorff_cup, e.median.hausdorff_cup - r.median.hausdorff_cup);
}

std::vector<fs::path> export_activation_maps(const UNetConfig& network, const ModelParams<float>& params,
                                             const Dataset& data, const std::vector<std::string>& ids,
                                             const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& id : ids) {
    const auto probs = predict(params, network, data.at(id).image);
    const std::size_t n = static_cast<std::size_t>(probs.height()) * probs.width();
    for (int k = 0; k < probs.channels(); ++k) {
      std::vector<std::uint8_t> bytes(n);
      for (std::size_t p = 0; p < n; ++p) bytes[p] = quantize(probs.data()[p * probs.channels() + k]);
      auto path = out_dir / (id + "_" + std::string(role_name(probs.roles()[k])) + ".pgm");
      write_pgm_bytes(path, probs.height(), probs.width(), bytes);
      written.push_back(std::move(path));
    }
  }
  return written;
}

void write_split_csv(const fs::path& path, const SplitIds& s) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "image_id,split\n";
  for (const auto& id : s.train) out << id << ",train\n";
  for (const auto& id : s.val) out << id << ",val\n";
  for (const auto& id : s.test) out << id << ",test\n";
}

void write_run_manifest(const fs::path& path, const ExperimentConfig& cfg, const std::string& command,
                        const std::vector<fs::path>& artifacts) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << "command=" << command << '\n';
  out << "config_hash=" << hex64(cfg.hash()) << '\n';
  out << "seed=" << cfg.seed << '\n';
  // relative to the manifest, so the same run under another --out matches byte for byte
  const auto base = path.parent_path();
  for (const auto& a : artifacts) {
    auto rel = a.lexically_relative(base);
    out << "artifact=" << (rel.empty() ? a : rel).generic_string() << '\n';
  }
  out << "[config]\n" << cfg.to_text();
}

}  // namespace edgeseg
