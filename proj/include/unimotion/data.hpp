#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimotion/checkpoint.hpp"
#include "unimotion/errors.hpp"
#include "unimotion/rng.hpp"
#include "unimotion/signal.hpp"
#include "unimotion/text.hpp"
#include "unimotion/types.hpp"

namespace unimotion {

constexpr const char* kDataSchema = "unimotion-data-v1";

struct DatasetManifest {
  std::string name;
  std::string kind;  // "activity" or "gesture"
  double sample_rate_hz = 0;
  std::string acc_unit = "m/s2";   // or "g"
  std::string gyro_unit = "rad/s"; // or "deg/s"
  std::vector<std::string> class_names;
  std::vector<std::string> user_ids;
  struct FileEntry {
    std::string path;
    std::string user;
    int class_id = 0;
  };
  std::vector<FileEntry> files;
  std::filesystem::path base_dir;

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("manifest not found: " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ParseError("manifest unreadable: " + std::string(e.what()));
    }
    if (j.value("schema", "") != kDataSchema)
      throw ParseError("manifest schema must be " + std::string(kDataSchema));
    DatasetManifest m;
    m.name = j.value("name", "dataset");
    m.kind = j.value("kind", "gesture");
    m.sample_rate_hz = j.value("sample_rate_hz", 0.0);
    if (j.contains("channel_units")) {
      m.acc_unit = j["channel_units"].value("acc", "m/s2");
      m.gyro_unit = j["channel_units"].value("gyro", "rad/s");
    }
    if (m.acc_unit != "m/s2" && m.acc_unit != "g")
      throw UnitError("unknown accelerometer unit: " + m.acc_unit);
    if (m.gyro_unit != "rad/s" && m.gyro_unit != "deg/s")
      throw UnitError("unknown gyroscope unit: " + m.gyro_unit);
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.user_ids = j.value("user_ids", std::vector<std::string>{});
    for (const auto& f : j.value("files", nlohmann::json::array())) {
      FileEntry e;
      e.path = f.at("path").get<std::string>();
      e.user = f.value("user", "unknown");
      e.class_id = f.at("class").get<int>();
      if (e.class_id < 0 || e.class_id >= static_cast<int>(m.class_names.size()))
        throw ParseError("manifest class index out of range: " + e.path);
      m.files.push_back(std::move(e));
    }
    m.base_dir = path.parent_path();
    return m;
  }
};

namespace detail {

inline double parse_field(const std::string& field, const std::string& file,
                          size_t line_no) {
  double value = 0;
  const char* begin = field.data();
  const char* end = begin + field.size();
  while (begin < end && (*begin == ' ' || *begin == '\t')) ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr != end)
    throw ParseError(file + ":" + std::to_string(line_no) + ": bad number '" + field + "'");
  return value;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  size_t start = 0;
  while (true) {
    const size_t comma = line.find(',', start);
    std::string field = line.substr(start, comma - start);
    if (!field.empty() && field.back() == '\r') field.pop_back();
    out.push_back(std::move(field));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

/// Parse a canonical recording CSV. Header "t,ax,ay,az,gx,gy,gz"; extra
/// columns (e.g. magnetometer) are ignored; accelerometer-only files
/// ("t,ax,ay,az") zero-fill the gyroscope channels and set the flag.
inline RawStream load_csv(const std::filesystem::path& path,
                          bool* gyro_zero_filled = nullptr) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty file");
  auto header = detail::split_csv_line(line);
  const std::vector<std::string> want{"t", "ax", "ay", "az", "gx", "gy", "gz"};
  const bool acc_only = header.size() == 4;
  const size_t expect = acc_only ? 4 : 7;
  if (header.size() < expect)
    throw ParseError(path.string() + ": header must start with t,ax,ay,az[,gx,gy,gz]");
  for (size_t i = 0; i < expect; ++i)
    if (header[i] != want[i])
      throw ParseError(path.string() + ": unexpected header column '" + header[i] + "'");
  if (gyro_zero_filled) *gyro_zero_filled = acc_only;

  std::vector<std::array<double, 7>> rows;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() < expect)
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(expect) + " columns, got " +
                       std::to_string(fields.size()));
    std::array<double, 7> row{};
    for (size_t c = 0; c < expect; ++c)
      row[c] = detail::parse_field(fields[c], path.string(), line_no);
    rows.push_back(row);
  }
  if (rows.empty()) throw ParseError(path.string() + ": no samples");

  RawStream raw;
  raw.t.resize(static_cast<Index>(rows.size()));
  raw.x.resize(static_cast<Index>(rows.size()), kNumChannels);
  for (size_t i = 0; i < rows.size(); ++i) {
    raw.t[static_cast<Index>(i)] = rows[i][0];
    for (int c = 0; c < kNumChannels; ++c)
      raw.x(static_cast<Index>(i), c) = rows[i][static_cast<size_t>(c + 1)];
  }
  return raw;
}

template <typename Scalar>
struct LoadedDataset {
  std::string name;
  std::string kind;
  std::vector<IMUWindow<Scalar>> windows;
  std::vector<int> labels;
  std::vector<std::string> users;
  std::vector<std::string> class_names;
  bool gyro_zero_filled = false;

  size_t size() const { return windows.size(); }
  Index num_classes() const { return static_cast<Index>(class_names.size()); }
};

/// Load every file in the manifest, convert units, preprocess to canonical
/// windows. Files are merged in manifest order.
template <typename Scalar>
LoadedDataset<Scalar> load_dataset(const DatasetManifest& m) {
  LoadedDataset<Scalar> ds;
  ds.name = m.name;
  ds.kind = m.kind;
  ds.class_names = m.class_names;
  const double acc_scale = m.acc_unit == "g" ? 9.80665 : 1.0;
  const double gyro_scale = m.gyro_unit == "deg/s" ? M_PI / 180.0 : 1.0;
  for (const auto& f : m.files) {
    bool acc_only = false;
    RawStream raw = load_csv(m.base_dir / f.path, &acc_only);
    ds.gyro_zero_filled |= acc_only;
    raw.x.leftCols(3) *= acc_scale;
    raw.x.rightCols(3) *= gyro_scale;
    ds.windows.push_back(preprocess<Scalar>(raw));
    ds.labels.push_back(f.class_id);
    ds.users.push_back(f.user);
  }
  return ds;
}

enum class SplitMode { kPretrain801010, kFinetuneStratified, kCrossDataset };

struct SplitSpec {
  SplitMode mode = SplitMode::kPretrain801010;
  double label_rate = 0.10;  // stratified mode
  uint64_t seed = 0;

  void validate() const {
    if (label_rate <= 0.0 || label_rate > 1.0)
      throw InvalidConfig("SplitSpec: label_rate must be in (0,1]");
  }
};

struct Splits {
  std::vector<size_t> train, val, test;
};

inline Splits make_splits(size_t n, const std::vector<int>& labels,
                          const SplitSpec& spec) {
  spec.validate();
  Splits s;
  if (spec.mode == SplitMode::kCrossDataset) {
    // whole-dataset assignment; pairing across datasets happens in the caller
    s.train.resize(n);
    for (size_t i = 0; i < n; ++i) s.train[i] = i;
    return s;
  }
  if (spec.mode == SplitMode::kPretrain801010) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    Rng rng = Rng::derive(spec.seed, 0xdeadbeef);
    rng.shuffle(idx);
    const size_t n_train = static_cast<size_t>(std::lround(0.8 * static_cast<double>(n)));
    const size_t n_val = static_cast<size_t>(std::lround(0.1 * static_cast<double>(n)));
    s.train.assign(idx.begin(), idx.begin() + static_cast<long>(n_train));
    s.val.assign(idx.begin() + static_cast<long>(n_train),
                 idx.begin() + static_cast<long>(n_train + n_val));
    s.test.assign(idx.begin() + static_cast<long>(n_train + n_val), idx.end());
    return s;
  }

  // stratified: per-class counts rounded to nearest, minimum 1
  if (labels.size() != n)
    throw InvalidInput("make_splits: stratified mode needs labels");
  int num_classes = 0;
  for (int y : labels) num_classes = std::max(num_classes, y + 1);
  std::vector<std::vector<size_t>> by_class(static_cast<size_t>(num_classes));
  for (size_t i = 0; i < n; ++i) by_class[static_cast<size_t>(labels[i])].push_back(i);
  Rng rng = Rng::derive(spec.seed, 0x5741f);
  for (int k = 0; k < num_classes; ++k) {
    auto& members = by_class[static_cast<size_t>(k)];
    if (members.empty())
      throw StratificationError("class " + std::to_string(k) + " has no samples");
    const size_t take = std::max<size_t>(
        1, static_cast<size_t>(std::lround(spec.label_rate *
                                           static_cast<double>(members.size()))));
    rng.shuffle(members);
    for (size_t i = 0; i < members.size(); ++i)
      (i < take ? s.train : s.test).push_back(members[i]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

// --- synthetic gesture corpus ------------------------------------------------

struct ClassTemplate {
  int gyro_axis = 0;     // 0..2; the coupled accelerometer bump shares the index
  double polarity = 1;   // sign of the half-sine bump
  int bump_count = 1;
  Index duration = 14;   // samples per bump

  bool operator==(const ClassTemplate&) const = default;
};

struct SyntheticSpec {
  int num_classes = 6;
  Index samples_per_class = 100;
  double noise = 0.1;
  uint64_t seed = 0;
  Index t_len = kWindowLen;
  double amplitude = 2.0;

  void validate() const {
    if (num_classes < 1 || samples_per_class < 1 || t_len < 16)
      throw InvalidConfig("SyntheticSpec: bad sizes");
  }
};

/// Deterministic per-class kinematics. Classes 2k and 2k+1 within each group
/// of six form mirror pairs (same axis and shape, opposite polarity) except
/// the fifth class, whose bump count breaks the mirror.
inline std::vector<ClassTemplate> default_templates(int num_classes) {
  std::vector<ClassTemplate> out;
  for (int k = 0; k < num_classes; ++k) {
    ClassTemplate t;
    t.gyro_axis = (k / 2) % 3;
    t.polarity = k % 2 == 0 ? 1.0 : -1.0;
    t.bump_count = k % 6 == 4 ? 2 : 1;
    t.duration = 14 + 4 * (k / 6);
    out.push_back(t);
  }
  return out;
}

/// Text attributes mirroring the synthetic kinematics so the semantic table
/// sees mirror pairs as near neighbours.
inline std::vector<GestureAttributes> synthetic_class_attrs(int num_classes) {
  constexpr std::array dirs{Direction::kUp, Direction::kDown, Direction::kLeft,
                            Direction::kRight, Direction::kNone, Direction::kCircular};
  std::vector<GestureAttributes> out;
  for (int k = 0; k < num_classes; ++k) {
    GestureAttributes a;
    a.class_id = k;
    const int slot = k % 6;
    a.direction = dirs[static_cast<size_t>(slot)];
    if (slot < 4) {
      a.motion_type = MotionType::kSwipe;
      a.category = Category::kDirectional;
      a.complexity = k < 6 ? Complexity::kSimple : Complexity::kComplex;
    } else if (slot == 4) {
      a.motion_type = MotionType::kTap;
      a.category = Category::kTap;
      a.complexity = Complexity::kComplex;
    } else {
      a.motion_type = MotionType::kShapeTracing;
      a.category = Category::kShape;
      a.complexity = Complexity::kSimple;
    }
    out.push_back(a);
  }
  return out;
}

template <typename Scalar>
struct SyntheticDataset {
  std::vector<IMUWindow<Scalar>> windows;
  std::vector<int> labels;
  std::vector<ClassTemplate> templates;
  std::vector<GestureAttributes> attrs;
  std::vector<std::string> class_names;
};

/// Zero baseline + class-template half-sine bump(s) + Gaussian noise. Bump
/// placement jitter derives from the sample index alone so mirror-pair
/// classes produce exactly mirrored signals at equal noise seeds.
template <typename Scalar>
SyntheticDataset<Scalar> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset<Scalar> ds;
  ds.templates = default_templates(spec.num_classes);
  ds.attrs = synthetic_class_attrs(spec.num_classes);
  for (int k = 0; k < spec.num_classes; ++k)
    ds.class_names.push_back(std::string("synthetic_") + std::to_string(k) + "_" +
                             to_string(ds.attrs[static_cast<size_t>(k)].direction));

  for (int k = 0; k < spec.num_classes; ++k) {
    const auto& tpl = ds.templates[static_cast<size_t>(k)];
    for (Index s = 0; s < spec.samples_per_class; ++s) {
      IMUWindow<Scalar> w;
      w.samples = Matrix<Scalar>::Zero(spec.t_len, kNumChannels);
      w.pad_mask = BoolArray::Constant(spec.t_len, false);

      Rng jitter = Rng::derive(spec.seed, 0x71e2, static_cast<uint64_t>(s));
      const Index shift = static_cast<Index>(jitter.uniform_int(17)) - 8;
      const Index gap = tpl.duration + 4;
      for (int b = 0; b < tpl.bump_count; ++b) {
        const Index span = gap * (tpl.bump_count - 1);
        Index center = spec.t_len / 2 + shift - span / 2 + b * gap;
        Index start = std::clamp<Index>(center - tpl.duration / 2, 0,
                                        spec.t_len - tpl.duration);
        for (Index i = 0; i < tpl.duration; ++i) {
          const double phase = std::sin(M_PI * static_cast<double>(i) /
                                        static_cast<double>(tpl.duration - 1));
          const double v = spec.amplitude * tpl.polarity * phase;
          w.samples(start + i, 3 + tpl.gyro_axis) += static_cast<Scalar>(v);
          w.samples(start + i, tpl.gyro_axis) += static_cast<Scalar>(0.5 * v);
        }
      }
      if (spec.noise > 0) {
        Rng noise = Rng::derive(spec.seed, 0x0153, static_cast<uint64_t>(k),
                                static_cast<uint64_t>(s));
        for (Index c = 0; c < kNumChannels; ++c)
          for (Index t = 0; t < spec.t_len; ++t)
            w.samples(t, c) += static_cast<Scalar>(noise.normal(0, spec.noise));
      }
      ds.windows.push_back(std::move(w));
      ds.labels.push_back(k);
    }
  }
  return ds;
}

/// Binary window export in the checkpoint container: tensors plus labels.
/// Round-trips the float pipeline bit-exactly.
template <typename Scalar>
void export_windows(std::span<const IMUWindow<Scalar>> windows,
                    const std::vector<int>& labels,
                    const std::vector<std::string>& class_names,
                    const std::filesystem::path& path) {
  Checkpoint ck;
  ck.meta["kind"] = "windows";
  ck.meta["labels"] = labels;
  ck.meta["class_names"] = class_names;
  ck.meta["count"] = windows.size();
  for (size_t i = 0; i < windows.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "window.%06zu", i);
    const auto& w = windows[i];
    Checkpoint::Tensor samples;
    samples.name = std::string(name) + ".samples";
    samples.rows = w.len();
    samples.cols = kNumChannels;
    samples.data.resize(static_cast<size_t>(w.samples.size()));
    for (Index r = 0; r < w.len(); ++r)
      for (Index c = 0; c < kNumChannels; ++c)
        samples.data[static_cast<size_t>(r * kNumChannels + c)] =
            static_cast<float>(w.samples(r, c));
    ck.tensors.push_back(std::move(samples));
    Checkpoint::Tensor pad;
    pad.name = std::string(name) + ".pad";
    pad.rows = 1;
    pad.cols = w.len();
    pad.data.resize(static_cast<size_t>(w.len()));
    for (Index t = 0; t < w.len(); ++t)
      pad.data[static_cast<size_t>(t)] = w.pad_mask[t] ? 1.0f : 0.0f;
    ck.tensors.push_back(std::move(pad));
  }
  ck.save(path);
}

template <typename Scalar>
LoadedDataset<Scalar> import_windows(const std::filesystem::path& path) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta.value("kind", "") != "windows")
    throw IncompatibleCheckpoint("not a window export: " + path.string());
  LoadedDataset<Scalar> ds;
  ds.name = "import";
  ds.labels = ck.meta.value("labels", std::vector<int>{});
  ds.class_names = ck.meta.value("class_names", std::vector<std::string>{});
  const size_t count = ck.meta.at("count").get<size_t>();
  for (size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "window.%06zu", i);
    const auto* samples = ck.find(std::string(name) + ".samples");
    const auto* pad = ck.find(std::string(name) + ".pad");
    if (!samples || !pad)
      throw IncompatibleCheckpoint("window export missing tensors");
    IMUWindow<Scalar> w;
    w.samples.resize(samples->rows, samples->cols);
    for (Index r = 0; r < samples->rows; ++r)
      for (Index c = 0; c < samples->cols; ++c)
        w.samples(r, c) = static_cast<Scalar>(
            samples->data[static_cast<size_t>(r * samples->cols + c)]);
    w.pad_mask = BoolArray::Constant(pad->cols, false);
    for (Index t = 0; t < pad->cols; ++t)
      w.pad_mask[t] = pad->data[static_cast<size_t>(t)] != 0.0f;
    ds.windows.push_back(std::move(w));
    ds.users.push_back("import");
  }
  return ds;
}

/// Write a synthetic dataset as canonical CSV files plus manifest (one-time
/// import format used by the CLI).
template <typename Scalar>
void export_dataset_csv(const SyntheticDataset<Scalar>& ds,
                        const std::filesystem::path& dir, double rate = kSampleRate) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["schema"] = kDataSchema;
  manifest["name"] = "synthetic";
  manifest["kind"] = "gesture";
  manifest["sample_rate_hz"] = rate;
  manifest["channel_units"] = {{"acc", "m/s2"}, {"gyro", "rad/s"}};
  manifest["class_names"] = ds.class_names;
  manifest["user_ids"] = std::vector<std::string>{"synthetic"};
  auto files = nlohmann::json::array();
  for (size_t i = 0; i < ds.windows.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "w%05zu_c%02d.csv", i, ds.labels[i]);
    std::ofstream out(dir / name);
    out.precision(17);
    out << "t,ax,ay,az,gx,gy,gz\n";
    const auto& w = ds.windows[i];
    for (Index t = 0; t < w.len(); ++t) {
      out << static_cast<double>(t) / rate;
      for (Index c = 0; c < kNumChannels; ++c)
        out << "," << static_cast<double>(w.samples(t, c));
      out << "\n";
    }
    files.push_back({{"path", name}, {"user", "synthetic"}, {"class", ds.labels[i]}});
  }
  manifest["files"] = files;
  std::ofstream mf(dir / "manifest.json");
  mf << manifest.dump(2) << "\n";
}

}  // namespace unimotion
