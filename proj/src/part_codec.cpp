#include "slotflow/part_codec.hpp"

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
PartCodec<T>::PartCodec(Index tokens, Index latent_dim, Index points, Index point_hidden,
                        Index point_features, Index decoder_hidden, std::mt19937_64& rng)
    : point1("codec.point1", 3, point_hidden, rng),
      point2("codec.point2", point_hidden, point_features, rng),
      project("codec.project", point_features, tokens * latent_dim, rng),
      expand("codec.expand", tokens * latent_dim, decoder_hidden, rng),
      emit("codec.emit", decoder_hidden, points * 3, rng, /*bias=*/false),
      offset("codec.offset", Mat<T>::Zero(1, 3)),
      tokens_(tokens),
      latent_dim_(latent_dim),
      points_(points) {
  // keep the initial decoded cloud compact around the offset
  emit.weight.value *= T(0.1);
}

template <typename T>
Var PartCodec<T>::encode(Tape<T>& tape, Var points, Index batch) {
  Var h = tape.relu(point1.forward(tape, points));
  h = tape.relu(point2.forward(tape, h));
  Var pooled = tape.group_max_rows(h, tape.value(points).rows() / batch);
  Var flat = project.forward(tape, pooled);
  Var tok = tape.reshape(flat, batch * tokens_, latent_dim_);
  return tape.layer_norm(tok, T(1e-5));
}

template <typename T>
Var PartCodec<T>::decode(Tape<T>& tape, Var tokens, Index batch) {
  Var flat = tape.reshape(tokens, batch, tokens_ * latent_dim_);
  Var h = tape.relu(expand.forward(tape, flat));
  Var out = emit.forward(tape, h);
  Var pts = tape.reshape(out, batch * points_, 3);
  return tape.add_row(pts, tape.param(offset));
}

template <typename T>
Mat<T> PartCodec<T>::encode_part(const PartPointCloud& pc) {
  if (pc.points.rows() != points_) {
    throw config_error("encode_part: cloud has " + std::to_string(pc.points.rows()) +
                       " points, codec expects " + std::to_string(points_));
  }
  Tape<T> tape;
  Var x = tape.constant(pc.points.template cast<T>());
  return tape.value(encode(tape, x, 1));
}

template <typename T>
PartPointCloud PartCodec<T>::decode_part(const Mat<T>& tokens) {
  if (tokens.rows() != tokens_ || tokens.cols() != latent_dim_) {
    throw config_error("decode_part: token matrix shape mismatch");
  }
  if (!tokens.allFinite()) throw argument_error("decode_part: non-finite tokens");
  Tape<T> tape;
  Var z = tape.constant(tokens);
  PartPointCloud pc;
  pc.points = tape.value(decode(tape, z, 1)).template cast<float>();
  return pc;
}

template <typename T>
void PartCodec<T>::collect(ParamList<T>& out) {
  point1.collect(out);
  point2.collect(out);
  project.collect(out);
  expand.collect(out);
  emit.collect(out);
  out.push_back(&offset);
}

template <typename T>
void PartCodec<T>::zero_weights() {
  point1.zero_weights();
  point2.zero_weights();
  project.zero_weights();
  expand.zero_weights();
  emit.zero_weights();
  offset.value.setZero();
}

template class PartCodec<float>;
template class PartCodec<double>;

}  // namespace slotflow
