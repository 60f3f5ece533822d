#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "unimotion/errors.hpp"
#include "unimotion/types.hpp"

namespace unimotion {

enum class Direction { kUp, kDown, kLeft, kRight, kCircular, kNone };
enum class MotionType { kSwipe, kRotation, kShapeTracing, kTap, kHold };
enum class Category { kStationary, kDirectional, kRotational, kShape, kTap };
enum class Complexity { kSimple, kComplex };

constexpr int kNumDirections = 6;
constexpr int kNumMotionTypes = 5;
constexpr int kNumCategories = 5;
constexpr int kNumComplexities = 2;

inline const char* to_string(Direction d) {
  constexpr std::array names{"up", "down", "left", "right", "circular", "none"};
  return names[static_cast<size_t>(d)];
}
inline const char* to_string(MotionType t) {
  constexpr std::array names{"swipe", "rotation", "shape-tracing", "tap", "hold"};
  return names[static_cast<size_t>(t)];
}
inline const char* to_string(Category c) {
  constexpr std::array names{"stationary", "directional", "rotational", "shape", "tap"};
  return names[static_cast<size_t>(c)];
}
inline const char* to_string(Complexity c) {
  return c == Complexity::kSimple ? "simple" : "complex";
}

struct GestureAttributes {
  int class_id = 0;
  Direction direction = Direction::kNone;
  MotionType motion_type = MotionType::kTap;
  Category category = Category::kTap;
  Complexity complexity = Complexity::kSimple;
};

struct GestureDescription : GestureAttributes {
  std::string rendered;
};

/// Deterministic instantiation of the structured description template, e.g.
/// "an upward swipe gesture with properties: primary type: directional,
/// direction: up, complexity: simple."
inline GestureDescription render_description(const GestureAttributes& attrs) {
  constexpr std::array adjectives{"upward", "downward", "leftward", "rightward",
                                  "circular", ""};
  const std::string adj = adjectives[static_cast<size_t>(attrs.direction)];
  std::string head = adj.empty() ? std::string(to_string(attrs.motion_type))
                                 : adj + " " + to_string(attrs.motion_type);
  const bool vowel = head.find_first_of("aeiou") == 0;
  std::ostringstream os;
  os << (vowel ? "an " : "a ") << head << " gesture with properties: primary type: "
     << to_string(attrs.category) << ", direction: " << to_string(attrs.direction)
     << ", complexity: " << to_string(attrs.complexity) << ".";
  GestureDescription d;
  static_cast<GestureAttributes&>(d) = attrs;
  d.rendered = os.str();
  return d;
}

/// Per-class embeddings with the derived pairwise margins and weights
/// consumed by the classifier losses. Immutable after construction.
template <typename Scalar>
struct SemanticTable {
  Matrix<Scalar> embeddings;  // K x D, unit rows
  Matrix<Scalar> distance;    // K x K cosine distance in [0, 2]
  Matrix<Scalar> margin;      // K x K
  Matrix<Scalar> weight;      // K x K, zero diagonal
  std::string provider_id;

  Index num_classes() const { return margin.rows(); }

  uint64_t fingerprint() const {
    uint64_t h = 1469598103934665603ull;  // FNV-1a
    auto mix = [&h](const void* p, size_t n) {
      const auto* bytes = static_cast<const unsigned char*>(p);
      for (size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    };
    mix(provider_id.data(), provider_id.size());
    auto mix_matrix = [&](const Matrix<Scalar>& m) {
      for (Index j = 0; j < m.cols(); ++j)
        for (Index i = 0; i < m.rows(); ++i) {
          const float v = static_cast<float>(m(i, j));
          mix(&v, sizeof(v));
        }
    };
    mix_matrix(embeddings);
    mix_matrix(margin);
    mix_matrix(weight);
    return h;
  }
};

/// Deterministic fallback provider: one-hot encoding of (category, direction,
/// motion type, complexity), concatenated and L2-normalized.
template <typename Scalar>
Matrix<Scalar> embed_descriptions_structured(
    const std::vector<GestureDescription>& descs) {
  const Index dim = kNumCategories + kNumDirections + kNumMotionTypes + kNumComplexities;
  Matrix<Scalar> e = Matrix<Scalar>::Zero(static_cast<Index>(descs.size()), dim);
  for (size_t i = 0; i < descs.size(); ++i) {
    const auto& d = descs[i];
    Index off = 0;
    e(static_cast<Index>(i), off + static_cast<Index>(d.category)) = 1;
    off += kNumCategories;
    e(static_cast<Index>(i), off + static_cast<Index>(d.direction)) = 1;
    off += kNumDirections;
    e(static_cast<Index>(i), off + static_cast<Index>(d.motion_type)) = 1;
    off += kNumMotionTypes;
    e(static_cast<Index>(i), off + static_cast<Index>(d.complexity)) = 1;
  }
  e.rowwise().normalize();
  return e;
}

/// Load fixed per-class vectors produced offline by any sentence encoder.
/// File schema: {"provider_id", "dimension", "embeddings": {"<class_id>": [..]}}.
template <typename Scalar>
Matrix<Scalar> embed_descriptions_external(
    const std::vector<GestureDescription>& descs, const std::string& path,
    std::string* provider_id = nullptr) {
  std::ifstream in(path);
  if (!in) throw ProviderUnavailable("external embeddings not found: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ProviderUnavailable("external embeddings unreadable: " + std::string(e.what()));
  }
  if (!j.contains("embeddings") || !j.contains("dimension"))
    throw ProviderUnavailable("external embeddings missing fields: " + path);
  const Index dim = j["dimension"].get<Index>();
  Matrix<Scalar> e(static_cast<Index>(descs.size()), dim);
  for (size_t i = 0; i < descs.size(); ++i) {
    const std::string key = std::to_string(descs[i].class_id);
    if (!j["embeddings"].contains(key))
      throw ProviderUnavailable("external embeddings missing class " + key);
    const auto& arr = j["embeddings"][key];
    if (static_cast<Index>(arr.size()) != dim)
      throw ProviderUnavailable("external embedding dimension mismatch for class " + key);
    for (Index c = 0; c < dim; ++c)
      e(static_cast<Index>(i), c) = static_cast<Scalar>(arr[static_cast<size_t>(c)].get<double>());
  }
  e.rowwise().normalize();
  if (provider_id) *provider_id = j.value("provider_id", std::string("external"));
  return e;
}

/// Persist embeddings with their descriptions for audit; the inverse of
/// embed_descriptions_external.
template <typename Scalar>
void save_external_embeddings(const std::vector<GestureDescription>& descs,
                              const Matrix<Scalar>& embeddings,
                              const std::string& provider_id,
                              const std::string& path) {
  nlohmann::json j;
  j["provider_id"] = provider_id;
  j["dimension"] = embeddings.cols();
  for (size_t i = 0; i < descs.size(); ++i) {
    const std::string key = std::to_string(descs[i].class_id);
    std::vector<double> row(static_cast<size_t>(embeddings.cols()));
    for (Index c = 0; c < embeddings.cols(); ++c)
      row[static_cast<size_t>(c)] = static_cast<double>(embeddings(static_cast<Index>(i), c));
    j["embeddings"][key] = row;
    j["descriptions"][key] = descs[i].rendered;
  }
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

/// Linear margin/weight maps over cosine distance: similar classes get small
/// margins and large weights, dissimilar ones the reverse.
template <typename Scalar>
SemanticTable<Scalar> derive_margins_weights(const Matrix<Scalar>& embeddings,
                                             Scalar m_min = Scalar(0.2),
                                             Scalar m_max = Scalar(1.0),
                                             Scalar w_max = Scalar(1.0),
                                             std::string provider_id = "structured-v1") {
  if (embeddings.rows() < 2)
    throw InvalidConfig("derive_margins_weights: need at least 2 classes");
  if (m_min > m_max)
    throw InvalidConfig("derive_margins_weights: m_min must be <= m_max");
  const Index k = embeddings.rows();
  SemanticTable<Scalar> table;
  table.embeddings = embeddings;
  table.provider_id = std::move(provider_id);
  table.distance.resize(k, k);
  table.margin.resize(k, k);
  table.weight.resize(k, k);
  for (Index i = 0; i < k; ++i) {
    for (Index j = 0; j < k; ++j) {
      const Scalar d = i == j ? Scalar(0)
                              : Scalar(1) - embeddings.row(i).dot(embeddings.row(j));
      table.distance(i, j) = d;
      table.margin(i, j) = m_min + (m_max - m_min) * d / Scalar(2);
      table.weight(i, j) = i == j ? Scalar(0) : w_max * (Scalar(1) - d / Scalar(2));
    }
  }
  return table;
}

/// Text-off ablation: every pair gets the midpoint margin and full weight.
template <typename Scalar>
SemanticTable<Scalar> uniform_semantic_table(Index num_classes,
                                             Scalar m_min = Scalar(0.2),
                                             Scalar m_max = Scalar(1.0),
                                             Scalar w_max = Scalar(1.0)) {
  SemanticTable<Scalar> table;
  table.provider_id = "uniform";
  table.embeddings = Matrix<Scalar>::Zero(num_classes, 1);
  table.distance = Matrix<Scalar>::Zero(num_classes, num_classes);
  const Scalar mid = m_min + (m_max - m_min) / Scalar(2);
  table.margin = Matrix<Scalar>::Constant(num_classes, num_classes, mid);
  table.weight = Matrix<Scalar>::Constant(num_classes, num_classes, w_max);
  table.weight.diagonal().setZero();
  return table;
}

}  // namespace unimotion
