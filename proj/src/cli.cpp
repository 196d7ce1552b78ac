#include "ucvm/cli.hpp"

#include <csignal>
#include <iostream>
#include <iterator>
#include <sstream>
#include <thread>

#include "../vendor/CLI11.hpp"
#include "ucvm/bootstrap.hpp"
#include "ucvm/error.hpp"
#include "ucvm/publisher.hpp"
#include "ucvm/repository.hpp"
#include "ucvm/transport.hpp"
#include "ucvm/updater.hpp"

namespace ucvm::cli {

namespace {

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvariantError:
    case ErrorKind::IntegrityError:
    case ErrorKind::DecodeError:
      return 2;
    default:
      return 1;
  }
}

struct VolumeSpec {
  fs::path path;
  bool empty = false;
  std::optional<std::string> label;
};

VolumeSpec parse_volume(const std::string& text) {
  auto parts = split(text, ',');
  if (parts.empty() || parts[0].empty()) throw Error(ErrorKind::InvalidArgument, "empty --volume");
  VolumeSpec v;
  v.path = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) {
    if (parts[i] == "empty") {
      v.empty = true;
    } else if (parts[i].rfind("label=", 0) == 0) {
      v.label = parts[i].substr(6);
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown volume attribute '" + parts[i] + "'");
    }
  }
  return v;
}

Bytes load_user_data(const std::string& source, const std::optional<std::string>& proxy) {
  if (source.rfind("http://", 0) == 0) return http_get(source, proxy);
  return read_file(source);
}

void print_lines(std::ostream& out, const std::vector<std::string>& lines) {
  for (const auto& l : lines) out << l << "\n";
}

// Blocks SIGINT/SIGTERM for the calling thread (and the threads it starts),
// then waits for one of them on a helper thread.
void serve_until_signalled(RepoServer& server) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::thread waiter([&server, set] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.run();
  if (waiter.joinable()) {
    // run() may also return after an external stop(); wake the waiter.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
  }
}

class Dispatcher {
 public:
  Dispatcher(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(const std::vector<std::string>& args) {
    CLI::App app{"ucvm: snapshot repository, HTTP delivery and a simulated micro-VM boot", "ucvm"};
    app.set_config("--config", "", "key=value defaults for any flag");
    app.require_subcommand(1);
    app.fallthrough();

    add_publish(app);
    add_tag(app);
    add_tags(app);
    add_fsck(app);
    add_serve(app);
    add_boot(app);
    add_exec(app);
    add_update(app);
    add_shutdown(app);

    if (!args.empty() && !args[0].empty() && args[0][0] != '-' &&
        app.get_subcommand_no_throw(args[0]) == nullptr) {
      err_ << "error: UnknownSubcommand: '" << args[0] << "'\n";
      return 1;
    }
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
      app.parse(reversed);
    } catch (const CLI::ParseError& e) {
      return app.exit(e, out_, err_) == 0 ? 0 : 1;
    }
    try {
      return action_();
    } catch (const Error& e) {
      err_ << "error: " << e.what() << "\n";
      return exit_code_for(e.kind());
    } catch (const std::exception& e) {
      err_ << "internal error: " << e.what() << "\n";
      return 2;
    }
  }

 private:
  std::ostream& out_;
  std::ostream& err_;
  std::function<int()> action_;

  // Options are stored here so they outlive parsing.
  std::string repo_, tree_, name_, tag_, repo_name_, meta_, universe_, listen_ = "127.0.0.1:8080";
  std::string machine_, user_data_, proxy_, version_, payload_;
  std::uint64_t revision_ = 0;
  std::vector<std::string> volumes_, words_;

  void add_publish(CLI::App& app) {
    auto* sub = app.add_subcommand("publish", "Publish a host directory as the next revision");
    sub->add_option("--repo", repo_, "Repository directory (created if missing)")->required();
    sub->add_option("--tree", tree_, "Host directory to publish")->required();
    sub->add_option("--name", name_, "Snapshot name (defaults to the meta-package version)");
    sub->add_option("--tag", tag_, "Tag to move to the new revision");
    sub->add_option("--repo-name", repo_name_, "Repository name recorded in manifests");
    sub->add_option("--meta", meta_, "Meta-package file validated before publishing");
    sub->add_option("--universe", universe_, "Package universe for --meta");
    sub->callback([this] { action_ = [this] { return do_publish(); }; });
  }

  void add_tag(CLI::App& app) {
    auto* sub = app.add_subcommand("tag", "Point a tag at a published revision");
    sub->add_option("--repo", repo_, "Repository directory")->required();
    sub->add_option("--tag", tag_, "Tag name")->required();
    sub->add_option("--revision", revision_, "Revision number")->required();
    sub->callback([this] { action_ = [this] { return do_tag(); }; });
  }

  void add_tags(CLI::App& app) {
    auto* sub = app.add_subcommand("tags", "List revisions, snapshot names and tags");
    sub->add_option("--repo", repo_, "Repository directory")->required();
    sub->callback([this] { action_ = [this] { return do_tags(); }; });
  }

  void add_fsck(CLI::App& app) {
    auto* sub = app.add_subcommand("fsck", "Re-hash every stored object");
    sub->add_option("--repo", repo_, "Repository directory")->required();
    sub->callback([this] { action_ = [this] { return do_fsck(); }; });
  }

  void add_serve(CLI::App& app) {
    auto* sub = app.add_subcommand("serve", "Serve a repository over HTTP until interrupted");
    sub->add_option("--repo", repo_, "Repository directory")->required();
    sub->add_option("--listen", listen_, "addr:port (port 0 picks a free one)")->capture_default_str();
    sub->callback([this] { action_ = [this] { return do_serve(); }; });
  }

  void add_boot(CLI::App& app) {
    auto* sub = app.add_subcommand("boot", "Boot (or reboot) a simulated machine");
    sub->add_option("--machine", machine_, "Machine directory")->required();
    sub->add_option("--user-data", user_data_, "Contextualization file or http:// URL")->required();
    sub->add_option("--volume", volumes_, "Volume path[,empty|,label=X]; repeatable");
    sub->add_option("--proxy", proxy_, "HTTP proxy (overrides user data)")->envname("UCVM_PROXY");
    sub->callback([this] { action_ = [this] { return do_boot(); }; });
  }

  void add_exec(CLI::App& app) {
    auto* sub = app.add_subcommand("exec", "Act on the union view of a booted machine");
    sub->add_option("--machine", machine_, "Machine directory")->required();
    sub->add_option("--proxy", proxy_, "HTTP proxy")->envname("UCVM_PROXY");
    sub->add_option("command", words_, "read|ls|stat|write|mkdir|rm <path> [data]")->required();
    sub->callback([this] { action_ = [this] { return do_exec(); }; });
  }

  void add_update(CLI::App& app) {
    auto* sub = app.add_subcommand("update", "Stage an early user space update or drop the snapshot pin");
    sub->require_subcommand(1);
    auto* stage = sub->add_subcommand("stage", "Stage a new early user space for the next boot");
    stage->add_option("--machine", machine_, "Machine directory")->required();
    stage->add_option("--version", version_, "New version string")->required();
    stage->add_option("--payload", payload_, "Payload file")->required();
    stage->callback([this] { action_ = [this] { return do_stage(); }; });
    auto* unpin = sub->add_subcommand("unpin", "Follow the context selector again on next boot");
    unpin->add_option("--machine", machine_, "Machine directory")->required();
    unpin->callback([this] { action_ = [this] { return do_unpin(); }; });
  }

  void add_shutdown(CLI::App& app) {
    auto* sub = app.add_subcommand("shutdown", "Orderly teardown of a booted machine");
    sub->add_option("--machine", machine_, "Machine directory")->required();
    sub->callback([this] { action_ = [this] { return do_shutdown(); }; });
  }

  int do_publish() {
    std::error_code ec;
    Repository repo = fs::exists(fs::path(repo_) / "manifests", ec) ? Repository::open(repo_)
                                                                      : Repository::create(repo_);
    if (!meta_.empty()) {
      MetaPackage meta = parse_meta_package(read_file(meta_));
      PackageUniverse universe;
      if (!universe_.empty()) universe = parse_package_universe(read_file(universe_));
      ValidationReport report = validate_meta_package(meta, universe);
      if (!report.ok()) {
        for (const auto& m : report.missing) err_ << "missing=" << m.package.name << " " << m.package.version << "\n";
        for (const auto& c : report.conflicts) {
          err_ << "conflict=" << c.name << " " << c.first << " " << c.second << "\n";
        }
        throw Error(ErrorKind::InvalidPackage, "meta-package " + meta.name + " does not close");
      }
      if (name_.empty()) name_ = meta.version;
    }
    if (name_.empty()) throw Error(ErrorKind::InvalidArgument, "--name is required without --meta");
    PublishOptions options;
    if (!repo_name_.empty()) options.repo_name = repo_name_;
    Manifest m = publish_snapshot(repo, SourceTree::from_directory(tree_), name_, tag_, options);
    out_ << "revision=" << m.revision << "\n";
    out_ << "root_catalog=" << m.root_catalog.hex() << "\n";
    out_ << "tree_digest=" << catalog_tree_digest(repo.catalog(m)) << "\n";
    return 0;
  }

  int do_tag() {
    Repository repo = Repository::open(repo_);
    set_tag(repo, tag_, revision_);
    out_ << "tag=" << tag_ << "\nrevision=" << revision_ << "\n";
    return 0;
  }

  int do_tags() {
    Repository repo = Repository::open(repo_);
    TagDatabase db = repo.tags();
    for (auto rev : repo.revisions()) out_ << "revision=" << rev << "\n";
    for (const auto& [name, rev] : db.snapshots) out_ << "snapshot=" << name << " " << rev << "\n";
    for (const auto& [name, rev] : db.tags) out_ << "tag=" << name << " " << rev << "\n";
    return 0;
  }

  int do_fsck() {
    Repository repo = Repository::open(repo_);
    ObjectStore::FsckReport report = repo.store().fsck();
    out_ << "checked=" << report.checked << "\n";
    out_ << "errors=" << report.errors.size() << "\n";
    for (const auto& [path, reason] : report.errors) err_ << "corrupt=" << path << " " << reason << "\n";
    return report.errors.empty() ? 0 : 2;
  }

  int do_serve() {
    auto colon = listen_.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorKind::InvalidArgument, "--listen wants addr:port");
    int port = 0;
    try {
      port = std::stoi(listen_.substr(colon + 1));
    } catch (const std::exception&) {
      throw Error(ErrorKind::InvalidArgument, "bad port in '" + listen_ + "'");
    }
    RepoServer server(repo_);
    server.bind(listen_.substr(0, colon), port);
    out_ << "url=" << server.base_url() << "\nrepo_name=" << server.repo_name() << "\n";
    out_.flush();
    serve_until_signalled(server);
    return 0;
  }

  std::optional<std::string> proxy_override() const {
    if (proxy_.empty()) return std::nullopt;
    return proxy_;
  }

  int do_boot() {
    MachineState machine(machine_);
    if (!volumes_.empty()) {
      std::vector<VolumeProbe> probes;
      for (const auto& text : volumes_) {
        VolumeSpec spec = parse_volume(text);
        VolumeProbe probe = probe_volume(spec.path);
        if (spec.empty) probe.empty = true;
        if (spec.label) probe.label = spec.label;
        probes.push_back(std::move(probe));
      }
      ScratchDisk disk = discover_scratch(probes);
      if (!disk.initialized()) disk = ScratchDisk::initialize(disk.root);
      machine.attach(std::move(disk));
    } else if (!machine.scratch()) {
      machine.attach(discover_scratch({probe_volume(machine.dir() / "disk0")}));
    }

    Context ctx = parse_user_data(load_user_data(user_data_, proxy_override()));
    if (auto p = proxy_override()) ctx.proxy = p;
    BootReport report = boot(machine, ctx);
    out_ << report.encode();
    if (report.merge) out_ << report.merge->encode();
    // The stack is rebuilt by later commands; nothing stays mounted here.
    machine.release_booted();
    return 0;
  }

  int do_exec() {
    MachineState machine(machine_);
    BootOptions options;
    if (auto p = proxy_override()) options.client.proxy = p;
    RootStack& stack = reattach(machine, options);
    TransferStats before = stack.client().stats();
    int rc = exec_verb(stack.view());
    TransferStats after = stack.client().stats();
    record_session_transfer(machine, TransferStats{after.requests - before.requests,
                                                   after.bytes_downloaded - before.bytes_downloaded,
                                                   after.objects_fetched - before.objects_fetched});
    machine.release_booted();
    return rc;
  }

  int exec_verb(UnionMount& view) {
    const std::string& verb = words_[0];
    auto need = [&](std::size_t n) {
      if (words_.size() < n + 1) {
        throw Error(ErrorKind::InvalidArgument, verb + " needs " + std::to_string(n) + " argument(s)");
      }
    };
    if (verb == "read") {
      need(1);
      out_ << view.read(words_[1]);
    } else if (verb == "ls") {
      need(1);
      print_lines(out_, view.readdir(words_[1]));
    } else if (verb == "stat") {
      need(1);
      UnionStat st = view.stat(words_[1]);
      char mode[8];
      std::snprintf(mode, sizeof mode, "%04o", st.mode);
      out_ << "kind=" << to_string(st.kind) << "\nmode=" << mode << "\nuid=" << st.uid
           << "\ngid=" << st.gid << "\nsize=" << st.size
           << "\nlayer=" << (st.layer == Layer::Upper ? "upper" : "lower") << "\n";
    } else if (verb == "write") {
      need(1);
      std::string data;
      if (words_.size() > 2) {
        for (std::size_t i = 2; i < words_.size(); ++i) data += (i > 2 ? " " : "") + words_[i];
      } else {
        data.assign(std::istreambuf_iterator<char>(std::cin), {});
      }
      view.write(words_[1], data);
    } else if (verb == "mkdir") {
      need(1);
      view.mkdir(words_[1]);
    } else if (verb == "rm") {
      need(1);
      view.unlink(words_[1]);
    } else if (verb == "digest") {
      out_ << "tree_digest=" << view.tree_digest() << "\n";
    } else {
      throw Error(ErrorKind::InvalidArgument, "unknown exec verb '" + verb + "'");
    }
    return 0;
  }

  int do_stage() {
    MachineState machine(machine_);
    stage_ucvm_update(machine.require_scratch(), version_, read_file(payload_));
    out_ << "staged_version=" << version_ << "\n";
    return 0;
  }

  int do_unpin() {
    MachineState machine(machine_);
    auto was = machine.pinned_revision();
    unpin_snapshot(machine);
    out_ << "unpinned=" << (was ? std::to_string(*was) : "none") << "\n";
    return 0;
  }

  int do_shutdown() {
    MachineState machine(machine_);
    out_ << shutdown(machine).encode();
    return 0;
  }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  return Dispatcher(out, err).run(args);
}

CommandResult run_captured(const std::vector<std::string>& args) {
  std::ostringstream out;
  std::ostringstream err;
  CommandResult r;
  r.exit_code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

}  // namespace ucvm::cli
