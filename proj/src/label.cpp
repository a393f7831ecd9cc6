#include "arbiter/label.hpp"

#include <algorithm>
#include <sstream>

namespace arbiter {

CategorySet::CategorySet(std::initializer_list<Category> cats)
    : CategorySet(std::vector<Category>(cats)) {}

CategorySet::CategorySet(std::vector<Category> cats) : cats_(std::move(cats)) {
  std::sort(cats_.begin(), cats_.end());
  cats_.erase(std::unique(cats_.begin(), cats_.end()), cats_.end());
}

bool CategorySet::contains(const Category& c) const {
  return std::binary_search(cats_.begin(), cats_.end(), c);
}

bool CategorySet::subset_of(const CategorySet& other) const {
  return std::includes(other.cats_.begin(), other.cats_.end(), cats_.begin(),
                       cats_.end());
}

void CategorySet::insert(const Category& c) {
  auto it = std::lower_bound(cats_.begin(), cats_.end(), c);
  if (it == cats_.end() || *it != c) cats_.insert(it, c);
}

CategorySet CategorySet::minus(const CategorySet& other) const {
  std::vector<Category> out;
  std::set_difference(cats_.begin(), cats_.end(), other.cats_.begin(),
                      other.cats_.end(), std::back_inserter(out));
  return CategorySet(std::move(out));
}

CategorySet CategorySet::united_with(const CategorySet& other) const {
  std::vector<Category> out;
  std::set_union(cats_.begin(), cats_.end(), other.cats_.begin(),
                 other.cats_.end(), std::back_inserter(out));
  return CategorySet(std::move(out));
}

bool can_flow(const Label& from, const Label& to) {
  assert(!from.is_unlabeled() && !to.is_unlabeled());
  const CategorySet& a = from.categories();
  const CategorySet& b = to.categories();
  for (const Category& c : a) {
    if (c.kind == CategoryKind::Secrecy && !b.contains(c)) return false;
  }
  for (const Category& c : b) {
    if (c.kind == CategoryKind::Integrity && !a.contains(c)) return false;
  }
  return true;
}

bool can_flow_owned(const Label& from, const Label& to, const Ownership& own) {
  assert(!from.is_unlabeled() && !to.is_unlabeled());
  return can_flow(Label(from.categories().minus(own)),
                  Label(to.categories().minus(own)));
}

Permission perms_for(const Label& subject, const Ownership& subject_own,
                     const Label& object) {
  assert(!subject.is_unlabeled());
  if (object.is_unlabeled()) return Permission{true, true};
  return Permission{
      .read = can_flow_owned(object, subject, subject_own),
      .write = can_flow_owned(subject, object, subject_own),
  };
}

bool check_create(const Label& parent, const Ownership& parent_own,
                  const Label& child, const Ownership& child_own) {
  return can_flow_owned(parent, child, parent_own) &&
         child_own.subset_of(parent_own);
}

bool check_alloc(const Label& subject, const Ownership& subject_own,
                 const Label& object) {
  if (object.is_unlabeled()) return true;
  return can_flow_owned(subject, object, subject_own);
}

std::optional<Category> new_category(CategoryKind kind,
                                     CategoryCounter& counter) {
  if (counter.next == 0) return std::nullopt;  // exhausted, group-fatal
  Category c{counter.next, kind};
  counter.next += 1;  // wraps to 0 after the final id
  return c;
}

const char* perm_text(Permission p) {
  if (p.read && p.write) return "RW";
  if (p.read) return "R";
  if (p.write) return "W";
  return "--";
}

std::optional<Permission> perm_from_text(const std::string& text) {
  if (text == "RW") return Permission{true, true};
  if (text == "R") return Permission{true, false};
  if (text == "W") return Permission{false, true};
  if (text == "--") return Permission{false, false};
  return std::nullopt;
}

std::string format_set(const CategorySet& set, const CategoryNamer& namer) {
  std::ostringstream out;
  out << '{';
  bool first = true;
  for (const Category& c : set) {
    if (!first) out << ", ";
    first = false;
    out << namer(c) << (c.kind == CategoryKind::Secrecy ? "_r" : "_w");
  }
  out << '}';
  return out.str();
}

std::string format_label(const Label& label, const CategoryNamer& namer) {
  if (label.is_unlabeled()) return "null";
  return format_set(label.categories(), namer);
}

namespace {
constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

uint64_t fnv_mix(uint64_t h, uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (i * 8)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}
}  // namespace

size_t CategorySetHash::operator()(const CategorySet& s) const {
  uint64_t h = kFnvOffset;
  for (const Category& c : s) {
    h = fnv_mix(h, c.id);
    h = fnv_mix(h, static_cast<uint64_t>(c.kind));
  }
  return static_cast<size_t>(h);
}

size_t LabelHash::operator()(const Label& l) const {
  if (l.is_unlabeled()) return static_cast<size_t>(0x9e3779b97f4a7c15ull);
  return CategorySetHash{}(l.categories());
}

}  // namespace arbiter
