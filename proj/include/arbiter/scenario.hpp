// Scenario harness: JSON fixtures describing categories, principals with
// step scripts, labeled objects and an expected access matrix; a
// deterministic cooperative runner executes the scripts against a fresh
// group and probes the matrix through mediated accesses.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "arbiter/monitor.hpp"
#include "arbiter/transport.hpp"

namespace arbiter {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mint-order name table: canonical names like "a_r" (secrecy) / "a_w"
// (integrity) to categories and back.
class CategoryNames {
 public:
  static std::optional<std::pair<std::string, CategoryKind>> split(
      const std::string& text);

  void add(const std::string& text, Category cat);
  std::optional<Category> find(const std::string& text) const;
  CategoryNamer namer() const;

  std::optional<Label> parse_label(const std::string& text) const;
  std::optional<CategorySet> parse_set(const std::string& text) const;

 private:
  std::map<std::string, Category> by_name_;
  std::map<uint64_t, std::string> base_by_id_;
};

struct StepSpec {
  enum class Kind {
    Alloc,
    Free,
    Read,
    Write,
    Query,
    Spawn,
    Join,
    Barrier,
    SetFaultPolicy,
  };
  Kind kind = Kind::Barrier;
  std::string object;     // alloc/free/read/write/query
  std::string principal;  // spawn/join
  std::string data;       // write payload
  std::string policy;     // "handle" | "terminate"
};

struct PrincipalDecl {
  std::string name;
  std::string label;
  std::string ownership;
  std::vector<StepSpec> script;
};

struct ObjectDecl {
  std::string name;
  std::string label;
  uint64_t size = 0;
};

using Matrix = std::map<std::string, std::map<std::string, std::string>>;

struct ScenarioConfig {
  std::string name;
  std::vector<std::string> categories;  // canonical names, mint order
  std::vector<PrincipalDecl> principals;
  std::vector<ObjectDecl> objects;
  Matrix expected_matrix;

  static ScenarioConfig from_json_text(const std::string& text);
  static ScenarioConfig from_json(const nlohmann::json& j);
  void validate() const;  // throws ConfigError
};

struct OpStat {
  uint64_t count = 0;
  double total_us = 0;
  double min_us = 0;
  double max_us = 0;

  double mean_us() const { return count == 0 ? 0 : total_us / count; }
  void record(double us);
};

struct StepIssue {
  std::string principal;
  std::string text;
};

struct RunReport {
  std::string scenario;
  Matrix observed;
  Matrix expected;
  bool matrix_match = false;
  std::vector<std::string> fault_lines;
  std::string audit_text;
  uint64_t audit_digest = 0;
  std::map<std::string, uint64_t> counters;
  std::map<std::string, OpStat> op_stats;
  std::string layout;
  std::vector<StepIssue> issues;  // unexpected step failures

  nlohmann::json to_json() const;
  std::string to_text(bool include_layout) const;
};

// Boots a group for a validated config: registers a bootstrap principal,
// mints the categories (the bootstrap thereby owns them all), creates the
// declared principals, then runs scripts on a deterministic round-robin
// scheduler. Used by the demo/run commands and by the attack suite.
class ScenarioSession {
 public:
  explicit ScenarioSession(const ScenarioConfig& config);
  ~ScenarioSession();

  void run_scripts();

  Group& group() { return group_; }
  const ScenarioConfig& config() const { return config_; }
  const CategoryNames& names() const { return names_; }

  uint32_t principal_id(const std::string& name) const;
  uint32_t object_addr(const std::string& name) const;  // 0 when unallocated
  uint64_t object_size(const std::string& name) const;

  // One RPC as the named principal (boot principal: empty name).
  CallResult call_as(const std::string& name, RequestBody body);

  // Mediated access matrix, probed under the Handle fault policy.
  Matrix probe_matrix();

  const std::map<std::string, OpStat>& op_stats() const { return op_stats_; }
  const std::vector<StepIssue>& issues() const { return issues_; }

 private:
  struct Context {
    const PrincipalDecl* decl = nullptr;
    uint32_t id = 0;
    std::unique_ptr<LocalConnection> conn;
    size_t pc = 0;
    bool at_barrier = false;
    bool done = false;
    bool top_level = false;
  };

  CallResult timed_call(LocalConnection& conn, const char* stat_name,
                        RequestBody body);
  bool run_one_step(Context& ctx);
  void finish_context(Context& ctx);
  Context* find_context(const std::string& name);
  void note_issue(const std::string& principal, const std::string& text);

  ScenarioConfig config_;
  Group group_;
  LocalTransport transport_;
  CategoryNames names_;
  std::unique_ptr<LocalConnection> boot_conn_;
  uint32_t boot_id_ = 0;
  std::vector<std::unique_ptr<Context>> contexts_;
  std::map<std::string, uint32_t> object_addr_;
  std::map<std::string, OpStat> op_stats_;
  std::vector<StepIssue> issues_;
  std::vector<std::pair<uint32_t, std::string>> spawned_entries_;
};

struct RunOptions {
  uint64_t seed = 0;  // reserved for randomized scripts; fixtures ignore it
};

RunReport run_scenario(const ScenarioConfig& config,
                       const RunOptions& options = {});

}  // namespace arbiter
