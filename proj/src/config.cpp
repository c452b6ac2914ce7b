#include "phonemask/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

#include "phonemask/digest.hpp"
#include "phonemask/errors.hpp"

namespace phonemask {

using nlohmann::json;

namespace {

json range_json(const augment::Range& r) { return json::array({r.lo, r.hi}); }

// Reads one JSON object, rejecting keys nobody asked for.
class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", path_));
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(fmt::format("{}.{}: {}", path_, key, e.what()));
    }
  }

  void range(const char* key, augment::Range& r) {
    std::vector<double> v;
    get(key, v);
    if (!j_.contains(key)) return;
    if (v.size() != 2) throw ConfigError(fmt::format("{}.{}: expected [lo, hi]", path_, key));
    r = {v[0], v[1]};
  }

  void optional_double(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    double v = 0.0;
    get(key, v);
    out = v;
  }

  // Null stands for +infinity.
  void double_or_inf(const char* key, double& out) {
    seen_.insert(key);
    if (j_.contains(key) && j_.at(key).is_null()) {
      out = std::numeric_limits<double>::infinity();
      return;
    }
    get(key, out);
  }

  Reader sub(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Reader(j_.contains(key) ? j_.at(key) : empty, fmt::format("{}.{}", path_, key));
  }

  void finish() const {
    for (const auto& [k, _] : j_.items())
      if (!seen_.count(k)) throw ConfigError(fmt::format("{}: unknown key '{}'", path_, k));
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json to_json(const PipelineConfig& c) {
  const auto& s = c.synth;
  const auto& a = s.augment;
  const auto& m = c.modulation.options;
  const auto& p = c.precomp.options;
  const auto& mic = c.channel.mic;
  const auto& cir = c.channel.synthetic_cir;
  const auto& tx = c.channel.transducer;
  const auto& r = c.recovery;
  json j;
  j["seed"] = c.seed;
  j["timestamp"] = c.timestamp;
  j["input"] = {{"manifest", c.input.manifest},         {"classifier", c.input.classifier},
                {"registration", c.input.registration}, {"gallery", c.input.gallery},
                {"speech", c.input.speech},             {"transcript", c.input.transcript}};
  j["synth"] = {{"s1_acceleration", s.s1_acceleration},
                {"s2_speed", range_json(s.s2_speed)},
                {"s2_gap_s", range_json(s.s2_gap_s)},
                {"crossfade_ms", s.crossfade_ms},
                {"sequence_weights", s.sequence_weights},
                {"duration_s", s.duration_s},
                {"headroom_dbfs", s.headroom_dbfs},
                {"augment",
                 {{"speed_range", range_json(a.speed_range)},
                  {"f0_mean_range", range_json(a.f0_mean_range)},
                  {"f0_contour_range", range_json(a.f0_contour_range)},
                  {"energy_range", range_json(a.energy_range)},
                  {"apply_probability", a.apply_probability}}}};
  j["modulation"] = {{"carrier_hz", m.carrier_hz},
                     {"scheme", std::string(txchain::to_string(m.scheme))},
                     {"include_carrier", m.include_carrier},
                     {"carrier_ratio", m.carrier_ratio},
                     {"bandwidth_hz", m.bandwidth_hz},
                     {"ultrasonic_rate", c.modulation.ultrasonic_rate}};
  j["precomp"] = {{"enabled", c.precomp.enabled},        {"fr_equiv", c.precomp.fr_equiv},
                  {"fr_rx", c.precomp.fr_rx},            {"num_taps", p.num_taps},
                  {"band_lo_hz", p.band_lo_hz},          {"band_hi_hz", p.band_hi_hz},
                  {"max_boost_db", p.max_boost_db},      {"upper_transition_hz", p.upper_transition_hz}};
  j["channel"] = {
      {"mic",
       {{"a1", mic.a1},
        {"a2", mic.a2},
        {"lowpass_cutoff_hz", mic.lowpass_cutoff_hz},
        {"mic_noise_floor_dbfs", mic.mic_noise_floor_dbfs},
        {"self_noise", mic.self_noise},
        {"noise_seed", mic.noise_seed}}},
      {"cir_dir", c.channel.cir_dir},
      {"synthetic_cir",
       {{"length_s", cir.length_s},
        {"direct_delay", cir.direct_delay},
        {"tail_db", cir.tail_db},
        {"decay_db", cir.decay_db}}},
      {"transducer",
       {{"axial_spl_at_1m", tx.axial_spl_at_1m},
        {"absorption_db_per_m", tx.absorption_db_per_m},
        {"reference_angle_deg", tx.reference_angle_deg},
        {"drop_at_reference_db", tx.drop_at_reference_db},
        {"floor_db", tx.floor_db}}},
      {"array_radius_m", c.channel.array_radius_m},
      {"array_tilt_deg", c.channel.array_tilt_deg}};
  j["mix"] = {{"snr_db", std::isinf(c.mix.snr_db) ? json(nullptr) : json(c.mix.snr_db)},
              {"shift_samples", c.mix.shift_samples},
              {"ambient_dbfs", c.mix.ambient_dbfs ? json(*c.mix.ambient_dbfs) : json(nullptr)},
              {"sweep_snr_db", c.mix.sweep_snr_db}};
  j["recovery"] = {{"max_shift", r.max_shift},       {"filter_taps", r.filter_taps},
                   {"mu", r.mu},                     {"epsilon", r.epsilon},
                   {"peak_floor", r.peak_floor},     {"lead", r.lead},
                   {"max_passes", r.max_passes},     {"convergence_db", r.convergence_db},
                   {"reference", std::string(recover::to_string(r.reference))}};
  j["asr"] = {{"kind", c.asr.kind},           {"endpoint", c.asr.endpoint},
              {"command", c.asr.command},     {"timeout_s", c.asr.timeout_s},
              {"token_env", c.asr.token_env}};
  return j;
}

PipelineConfig from_json(const json& j) {
  PipelineConfig c;
  Reader root(j, "config");
  root.get("seed", c.seed);
  root.get("timestamp", c.timestamp);

  auto in = root.sub("input");
  in.get("manifest", c.input.manifest);
  in.get("classifier", c.input.classifier);
  in.get("registration", c.input.registration);
  in.get("gallery", c.input.gallery);
  in.get("speech", c.input.speech);
  in.get("transcript", c.input.transcript);
  in.finish();

  auto s = root.sub("synth");
  s.get("s1_acceleration", c.synth.s1_acceleration);
  s.range("s2_speed", c.synth.s2_speed);
  s.range("s2_gap_s", c.synth.s2_gap_s);
  s.get("crossfade_ms", c.synth.crossfade_ms);
  s.get("sequence_weights", c.synth.sequence_weights);
  s.get("duration_s", c.synth.duration_s);
  s.get("headroom_dbfs", c.synth.headroom_dbfs);
  auto a = s.sub("augment");
  a.range("speed_range", c.synth.augment.speed_range);
  a.range("f0_mean_range", c.synth.augment.f0_mean_range);
  a.range("f0_contour_range", c.synth.augment.f0_contour_range);
  a.range("energy_range", c.synth.augment.energy_range);
  a.get("apply_probability", c.synth.augment.apply_probability);
  a.finish();
  s.finish();

  auto m = root.sub("modulation");
  auto& mo = c.modulation.options;
  m.get("carrier_hz", mo.carrier_hz);
  std::string scheme(txchain::to_string(mo.scheme));
  m.get("scheme", scheme);
  mo.scheme = txchain::parse_scheme(scheme);
  m.get("include_carrier", mo.include_carrier);
  m.get("carrier_ratio", mo.carrier_ratio);
  m.get("bandwidth_hz", mo.bandwidth_hz);
  m.get("ultrasonic_rate", c.modulation.ultrasonic_rate);
  m.finish();

  auto p = root.sub("precomp");
  p.get("enabled", c.precomp.enabled);
  p.get("fr_equiv", c.precomp.fr_equiv);
  p.get("fr_rx", c.precomp.fr_rx);
  p.get("num_taps", c.precomp.options.num_taps);
  p.get("band_lo_hz", c.precomp.options.band_lo_hz);
  p.get("band_hi_hz", c.precomp.options.band_hi_hz);
  p.get("max_boost_db", c.precomp.options.max_boost_db);
  p.get("upper_transition_hz", c.precomp.options.upper_transition_hz);
  p.finish();

  auto ch = root.sub("channel");
  auto mic = ch.sub("mic");
  mic.get("a1", c.channel.mic.a1);
  mic.get("a2", c.channel.mic.a2);
  mic.get("lowpass_cutoff_hz", c.channel.mic.lowpass_cutoff_hz);
  mic.get("mic_noise_floor_dbfs", c.channel.mic.mic_noise_floor_dbfs);
  mic.get("self_noise", c.channel.mic.self_noise);
  mic.get("noise_seed", c.channel.mic.noise_seed);
  mic.finish();
  ch.get("cir_dir", c.channel.cir_dir);
  auto cir = ch.sub("synthetic_cir");
  cir.get("length_s", c.channel.synthetic_cir.length_s);
  cir.get("direct_delay", c.channel.synthetic_cir.direct_delay);
  cir.get("tail_db", c.channel.synthetic_cir.tail_db);
  cir.get("decay_db", c.channel.synthetic_cir.decay_db);
  cir.finish();
  auto tx = ch.sub("transducer");
  tx.get("axial_spl_at_1m", c.channel.transducer.axial_spl_at_1m);
  tx.get("absorption_db_per_m", c.channel.transducer.absorption_db_per_m);
  tx.get("reference_angle_deg", c.channel.transducer.reference_angle_deg);
  tx.get("drop_at_reference_db", c.channel.transducer.drop_at_reference_db);
  tx.get("floor_db", c.channel.transducer.floor_db);
  tx.finish();
  ch.get("array_radius_m", c.channel.array_radius_m);
  ch.get("array_tilt_deg", c.channel.array_tilt_deg);
  ch.finish();

  auto mx = root.sub("mix");
  mx.double_or_inf("snr_db", c.mix.snr_db);
  mx.get("shift_samples", c.mix.shift_samples);
  mx.optional_double("ambient_dbfs", c.mix.ambient_dbfs);
  mx.get("sweep_snr_db", c.mix.sweep_snr_db);
  mx.finish();

  auto r = root.sub("recovery");
  r.get("max_shift", c.recovery.max_shift);
  r.get("filter_taps", c.recovery.filter_taps);
  r.get("mu", c.recovery.mu);
  r.get("epsilon", c.recovery.epsilon);
  r.get("peak_floor", c.recovery.peak_floor);
  r.get("lead", c.recovery.lead);
  r.get("max_passes", c.recovery.max_passes);
  r.get("convergence_db", c.recovery.convergence_db);
  std::string mode(recover::to_string(c.recovery.reference));
  r.get("reference", mode);
  c.recovery.reference = recover::parse_reference_mode(mode);
  r.finish();

  auto asr = root.sub("asr");
  asr.get("kind", c.asr.kind);
  asr.get("endpoint", c.asr.endpoint);
  asr.get("command", c.asr.command);
  asr.get("timeout_s", c.asr.timeout_s);
  asr.get("token_env", c.asr.token_env);
  asr.finish();

  root.finish();
  return c;
}

}  // namespace

std::string PipelineConfig::dump(int indent) const { return to_json(*this).dump(indent); }

PipelineConfig PipelineConfig::parse(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(fmt::format("config is not valid JSON: {}", e.what()));
  }
  return from_json(j);
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

void PipelineConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(fmt::format("cannot write {}", path.string()));
  out << dump(2) << '\n';
}

std::string PipelineConfig::digest() const { return sha256_hex(dump()); }

synth::SynthConfig PipelineConfig::synth_config() const {
  auto s = synth;
  s.seed = seed;
  return s;
}

void PipelineConfig::validate() const {
  auto check = [](const char* section, auto&& fn) {
    try {
      fn();
    } catch (const ContractError& e) {
      throw ConfigError(fmt::format("{}: {}", section, e.what()));
    }
  };
  check("synth", [&] { synth_config().validate(); });
  check("recovery", [&] { recovery.validate(); });
  check("channel.mic", [&] { channel.mic.validate(modulation.ultrasonic_rate); });
  const auto& m = modulation.options;
  if (!(m.carrier_hz > m.bandwidth_hz && m.carrier_hz + m.bandwidth_hz < modulation.ultrasonic_rate / 2.0))
    throw ConfigError(fmt::format("modulation: carrier {} Hz +/- {} Hz does not fit below the {} Hz "
                                  "Nyquist limit",
                                  m.carrier_hz, m.bandwidth_hz, modulation.ultrasonic_rate / 2.0));
  if (!(m.carrier_ratio >= 0.0)) throw ConfigError("modulation: carrier_ratio must be >= 0");
  if (precomp.options.num_taps % 2 == 0) throw ConfigError("precomp: num_taps must be odd");
  if (mix.sweep_snr_db.empty()) throw ConfigError("mix: sweep_snr_db is empty");
  if (!(channel.synthetic_cir.length_s > 0.0 && channel.synthetic_cir.length_s <= 1.0))
    throw ConfigError("channel.synthetic_cir: length_s must lie in (0, 1]");
}

}  // namespace phonemask
