#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace fluxml {

struct Metabolite {
  std::string id;
  std::string name;
  std::string compartment;

  bool operator==(const Metabolite&) const = default;
};

/// One reaction of the network. Flux units are mmol/gDW/hr; exchange
/// reactions export with positive flux, so uptake is a negative lower bound.
struct Reaction {
  std::string id;
  std::string name;
  std::map<std::string, double> stoichiometry;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
  double objective_coefficient = 0.0;
  std::optional<std::string> subsystem;

  bool operator==(const Reaction&) const = default;
};

class ModelError : public std::runtime_error {
 public:
  enum class Kind { Syntax, Semantic };

  ModelError(Kind kind, std::string offending, const std::string& message,
             std::optional<std::size_t> position = std::nullopt);

  Kind kind() const noexcept { return kind_; }
  /// Id of the offending metabolite or reaction (empty for syntax errors).
  const std::string& offending() const noexcept { return offending_; }
  /// Byte offset or line number of a syntax error, when known.
  std::optional<std::size_t> position() const noexcept { return position_; }

 private:
  Kind kind_;
  std::string offending_;
  std::optional<std::size_t> position_;
};

/// Validated, immutable stoichiometric network.
///
/// Construction enforces: unique non-empty ids, lb <= ub, non-empty
/// stoichiometry referencing declared metabolites, and a single objective
/// reaction carrying the only nonzero objective coefficient. If no reaction
/// carries a coefficient, the objective reaction is given coefficient 1.
class MetabolicModel {
 public:
  MetabolicModel(std::vector<Metabolite> metabolites, std::vector<Reaction> reactions,
                 std::string objective_reaction_id,
                 std::map<std::string, std::string> exchange_hints = {});

  const std::vector<Metabolite>& metabolites() const noexcept { return metabolites_; }
  const std::vector<Reaction>& reactions() const noexcept { return reactions_; }
  const std::string& objective_reaction_id() const noexcept { return objective_id_; }
  std::size_t objective_index() const noexcept { return objective_index_; }

  /// Optional logical-name -> reaction-id map stored alongside the model
  /// (e.g. "glucose" -> "EX_A"). Never inferred from names.
  const std::map<std::string, std::string>& exchange_hints() const noexcept {
    return exchange_hints_;
  }

  std::optional<std::size_t> find_reaction(std::string_view id) const;
  std::optional<std::size_t> find_metabolite(std::string_view id) const;
  /// Throws ModelError naming the id when absent.
  std::size_t reaction_index(std::string_view id) const;

  const Reaction& reaction(std::size_t j) const { return reactions_.at(j); }

  /// Copy with new bounds on reaction j; validates lb <= ub.
  MetabolicModel with_bounds(std::size_t j, double lb, double ub) const;

  std::vector<double> lower_bounds() const;
  std::vector<double> upper_bounds() const;
  std::vector<double> objective_vector() const;

  bool operator==(const MetabolicModel& other) const;

 private:
  void validate_and_index();

  std::vector<Metabolite> metabolites_;
  std::vector<Reaction> reactions_;
  std::string objective_id_;
  std::map<std::string, std::string> exchange_hints_;
  std::size_t objective_index_ = 0;
  std::unordered_map<std::string, std::size_t> reaction_lookup_;
  std::unordered_map<std::string, std::size_t> metabolite_lookup_;
};

/// Column-compressed stoichiometric matrix S (metabolites x reactions).
/// Entries are ordered by column, then by row.
struct SparseStoichMatrix {
  struct Entry {
    std::size_t row;
    std::size_t col;
    double value;
    bool operator==(const Entry&) const = default;
  };

  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<Entry> entries;
  std::vector<std::size_t> col_start;  // size cols + 1

  std::size_t column_size(std::size_t j) const { return col_start[j + 1] - col_start[j]; }

  /// Entry (i, j), or 0 when structurally absent.
  double at(std::size_t i, std::size_t j) const;

  /// y = S v
  std::vector<double> multiply(const std::vector<double>& v) const;

  static SparseStoichMatrix from_triplets(std::size_t rows, std::size_t cols,
                                          std::vector<Entry> triplets);
};

MetabolicModel parse_native_model(std::string_view text);
std::string serialize_native_model(const MetabolicModel& model);

struct SbmlImport {
  MetabolicModel model;
  /// Constructs that were skipped rather than imported.
  std::vector<std::string> warnings;
};

SbmlImport import_sbml_subset(std::string_view text);

SparseStoichMatrix stoichiometric_matrix(const MetabolicModel& model);

/// Loads either format from disk, dispatching on a leading '<'.
MetabolicModel load_model_file(const std::string& path,
                               std::vector<std::string>* warnings = nullptr);

/// FNV-1a 64 over the canonical native serialization, hex encoded. Equal
/// models hash equally regardless of the file format they came from.
std::string model_checksum(const MetabolicModel& model);

std::uint64_t fnv1a64(std::string_view bytes);

/// The bundled three-reaction fixture network.
MetabolicModel toy3_model();

}  // namespace fluxml
