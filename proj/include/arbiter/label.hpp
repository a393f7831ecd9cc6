// Label algebra: categories, labels, ownership and the flow rules that
// every monitor decision reduces to. All types here are immutable values;
// all functions are pure.
#pragma once

#include <cassert>
#include <compare>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <vector>

namespace arbiter {

enum class CategoryKind : uint8_t { Secrecy = 0, Integrity = 1 };

// Atomic protection unit. Secrecy categories guard reads, integrity
// categories guard writes. Ids are minted per group in creation order.
struct Category {
  uint64_t id = 0;
  CategoryKind kind = CategoryKind::Secrecy;

  friend auto operator<=>(const Category&, const Category&) = default;
};

// Sorted, duplicate-free set of categories.
class CategorySet {
 public:
  CategorySet() = default;
  CategorySet(std::initializer_list<Category> cats);
  explicit CategorySet(std::vector<Category> cats);

  bool contains(const Category& c) const;
  bool subset_of(const CategorySet& other) const;
  void insert(const Category& c);
  CategorySet minus(const CategorySet& other) const;
  CategorySet united_with(const CategorySet& other) const;

  bool empty() const { return cats_.empty(); }
  size_t size() const { return cats_.size(); }
  auto begin() const { return cats_.begin(); }
  auto end() const { return cats_.end(); }

  bool operator==(const CategorySet&) const = default;

 private:
  std::vector<Category> cats_;  // sorted by (id, kind)
};

using Ownership = CategorySet;

// Security label of a principal or data object. Label::unlabeled() is the
// distinguished no-label value: objects allocated without a label behave
// like plain malloc'd memory, read-writable by everyone. It is distinct
// from the empty category set, which takes part in the flow rules like any
// other label (an empty label is *not* universally writable).
class Label {
 public:
  Label() : cats_(CategorySet{}) {}  // the empty label {}
  explicit Label(CategorySet cats) : cats_(std::move(cats)) {}

  static Label unlabeled() { return Label(Unlabeled{}); }

  bool is_unlabeled() const { return !cats_.has_value(); }
  const CategorySet& categories() const {
    assert(cats_.has_value());
    return *cats_;
  }

  bool operator==(const Label&) const = default;

 private:
  struct Unlabeled {};
  explicit Label(Unlabeled) : cats_(std::nullopt) {}
  std::optional<CategorySet> cats_;
};

struct Permission {
  bool read = false;
  bool write = false;

  bool operator==(const Permission&) const = default;
};

// Flow partial order: data may flow from `from` to `to` iff every secrecy
// category of `from` is present in `to` and every integrity category of
// `to` is present in `from`. Both labels must be labeled values.
bool can_flow(const Label& from, const Label& to);

// Flow order with the bypassing power of ownership: categories in `own`
// are removed from both sides before the comparison.
bool can_flow_owned(const Label& from, const Label& to, const Ownership& own);

// Read/write rights of a subject (label + ownership) on an object label.
// An unlabeled object is read-writable by every subject.
Permission perms_for(const Label& subject, const Ownership& subject_own,
                     const Label& object);

// Thread creation gate: the child's label must be a legal flow target from
// the parent and the child's ownership a subset of the parent's.
bool check_create(const Label& parent, const Ownership& parent_own,
                  const Label& child, const Ownership& child_own);

// Allocation gate: allocating is a flow from the subject to the new
// object. An unlabeled allocation is always permitted.
bool check_alloc(const Label& subject, const Ownership& subject_own,
                 const Label& object);

// Monotone per-group id source for category creation.
struct CategoryCounter {
  uint64_t next = 1;
};

// Mints the next category. Empty when the counter is exhausted, which is a
// group-fatal condition for the caller.
std::optional<Category> new_category(CategoryKind kind,
                                     CategoryCounter& counter);

// "--", "R", "W" or "RW".
const char* perm_text(Permission p);
std::optional<Permission> perm_from_text(const std::string& text);

// Canonical text form used by configs and logs: "{a_r, b_w}" with entries
// in category-id order, "{}" for the empty label, "null" for unlabeled.
// The namer supplies the base name for a category id.
using CategoryNamer = std::function<std::string(const Category&)>;
std::string format_set(const CategorySet& set, const CategoryNamer& namer);
std::string format_label(const Label& label, const CategoryNamer& namer);

struct CategorySetHash {
  size_t operator()(const CategorySet& s) const;
};
struct LabelHash {
  size_t operator()(const Label& l) const;
};

}  // namespace arbiter
