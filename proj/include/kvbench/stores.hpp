#pragma once

// Store selection by name: "baseline", "reference", "gallery:<id>", and the
// test-only "seeded:reordered-flush".

#include <memory>
#include <string>
#include <string_view>

#include "kvbench/baseline_store.hpp"
#include "kvbench/hack_gallery.hpp"
#include "kvbench/reference/reference_store.hpp"

namespace kvbench {

// Wraps a store and flips the last byte of every non-empty value it returns.
// Used to show that a failing gate blocks the bench.
class FaultInjectingStore final : public KvStore {
 public:
  explicit FaultInjectingStore(std::unique_ptr<KvStore> inner) : inner_(std::move(inner)) {}

  std::string name() const override { return inner_->name(); }
  Completion read(ThreadId tid, Key key, ValueBuffer& out) override {
    Completion c = inner_->read(tid, key, out);
    if (c.status == Status::found && out.size() > 0) out.data()[out.size() - 1] ^= std::byte{0x5a};
    return c;
  }
  Completion upsert(ThreadId tid, Key key, ByteView value) override { return inner_->upsert(tid, key, value); }
  Completion rmw(ThreadId tid, Key key, Modifier modifier) override { return inner_->rmw(tid, key, modifier); }
  Completion remove(ThreadId tid, Key key) override { return inner_->remove(tid, key); }
  CheckpointId checkpoint() override { return inner_->checkpoint(); }
  void simulate_crash(CrashMode mode) override { inner_->simulate_crash(mode); }
  void recover() override { inner_->recover(); }
  IndicatorCounters snapshot_indicators() const override { return inner_->snapshot_indicators(); }

 private:
  std::unique_ptr<KvStore> inner_;
};

inline std::unique_ptr<KvStore> make_store(std::string_view selector, const StoreConfig& cfg) {
  if (selector == "baseline") return std::make_unique<BaselineStore>(cfg);
  if (selector == "reference") return std::make_unique<ReferenceStore>(cfg);
  if (selector == "seeded:reordered-flush") return std::make_unique<ReorderedFlushStore>(cfg);
  if (selector.starts_with("gallery:")) return build_gallery_store(selector.substr(8), cfg);
  throw UnknownVariant("unknown store '" + std::string(selector) + "'");
}

inline bool is_known_store(std::string_view selector) {
  if (selector == "baseline" || selector == "reference" || selector == "seeded:reordered-flush") return true;
  if (!selector.starts_with("gallery:")) return false;
  for (auto id : kGalleryIds)
    if (selector.substr(8) == id) return true;
  return false;
}

}  // namespace kvbench
