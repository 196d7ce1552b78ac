#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "ucvm/util.hpp"

namespace ucvm {

/// A host directory standing in for the scratch volume. Partitioning and
/// formatting are simulated by creating the subdirectories and label file.
struct ScratchDisk {
  static constexpr std::string_view kLabel = "UCVM_SCRATCH";
  static constexpr std::string_view kLabelFile = ".ucvm-label";

  fs::path root;
  std::string label;

  fs::path overlay_dir() const { return root / "overlay"; }
  fs::path cache_dir() const { return root / "cache"; }
  fs::path state_dir() const { return root / "state"; }

  /// Creates the subdirectories and writes the label.
  static ScratchDisk initialize(const fs::path& root);
  bool initialized() const;
};

class RootStack;

/// A simulated VM: its scratch volume, the revision it is pinned to, the
/// running early-userspace version and, while booted, its root stack.
///
/// Pinned revision and version live on the scratch volume (state/), so
/// they follow the disk. The machine directory only remembers which volume
/// is the scratch disk (machine.conf).
class MachineState {
 public:
  static constexpr std::string_view kDefaultUcvmVersion = "1.0";

  /// Creates `dir` if needed and re-attaches a previously chosen scratch.
  explicit MachineState(fs::path dir);
  ~MachineState();
  MachineState(MachineState&&) noexcept;
  MachineState& operator=(MachineState&&) noexcept;

  const fs::path& dir() const { return dir_; }

  void attach(ScratchDisk scratch);
  const std::optional<ScratchDisk>& scratch() const { return scratch_; }
  /// InvalidArgument when no scratch disk is attached.
  const ScratchDisk& require_scratch() const;

  std::optional<std::uint64_t> pinned_revision() const { return pinned_; }
  void set_pinned_revision(std::optional<std::uint64_t> revision);

  const std::string& ucvm_version() const { return ucvm_version_; }
  void set_ucvm_version(std::string version);

  RootStack* booted() const { return booted_.get(); }
  void set_booted(std::unique_ptr<RootStack> stack);
  std::unique_ptr<RootStack> release_booted();

 private:
  fs::path dir_;
  std::optional<ScratchDisk> scratch_;
  std::optional<std::uint64_t> pinned_;
  std::string ucvm_version_{kDefaultUcvmVersion};
  std::unique_ptr<RootStack> booted_;
};

}  // namespace ucvm
