#include "slotflow/view_encoder.hpp"

#include "slotflow/error.hpp"

namespace slotflow {

template <typename T>
ViewEncoder<T>::ViewEncoder(Index image_size, Index hidden_dim, Index feature_dim, std::mt19937_64& rng)
    : hidden("view.hidden", image_size * image_size, hidden_dim, rng),
      output("view.output", hidden_dim, feature_dim, rng),
      image_size_(image_size) {}

template <typename T>
Var ViewEncoder<T>::forward(Tape<T>& tape, Var images) {
  if (tape.value(images).cols() != image_size_ * image_size_) {
    throw config_error("view encoder: image has " + std::to_string(tape.value(images).cols()) +
                       " pixels, expected " + std::to_string(image_size_ * image_size_));
  }
  return output.forward(tape, tape.relu(hidden.forward(tape, images)));
}

template <typename T>
Mat<T> ViewEncoder<T>::encode_view(const ConditionImage& img) {
  Tape<T> tape;
  Var x = tape.constant(image_rows<T>({&img}, image_size_));
  return tape.value(forward(tape, x));
}

template <typename T>
void ViewEncoder<T>::collect(ParamList<T>& out) {
  hidden.collect(out);
  output.collect(out);
}

template <typename T>
Mat<T> image_rows(const std::vector<const ConditionImage*>& images, Index size) {
  Mat<T> m(static_cast<Index>(images.size()), size * size);
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto* img = images[i];
    if (img->size != size) {
      throw config_error("view encoder: image is " + std::to_string(img->size) + "x" +
                         std::to_string(img->size) + ", expected " + std::to_string(size));
    }
    for (Index p = 0; p < size * size; ++p) m(static_cast<Index>(i), p) = static_cast<T>(img->pixels[static_cast<std::size_t>(p)]);
  }
  return m;
}

template class ViewEncoder<float>;
template class ViewEncoder<double>;
template Mat<float> image_rows<float>(const std::vector<const ConditionImage*>&, Index);
template Mat<double> image_rows<double>(const std::vector<const ConditionImage*>&, Index);

}  // namespace slotflow
