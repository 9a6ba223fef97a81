# dev scratch: overfit run timing/margins (not part of the package)
import sys
import time
import tempfile
from pathlib import Path

from fdn.audio import generate_synthetic_corpus
from fdn.model import ModelConfig, FdnNetwork
from fdn.training import TrainConfig, train
from fdn.evaluation import all_pairs_trials, evaluate_protocol

variant = sys.argv[1] if len(sys.argv) > 1 else "light"
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 60
seed = int(sys.argv[3]) if len(sys.argv) > 3 else 0

tmp = Path(tempfile.mkdtemp())
train_man, test_man = generate_synthetic_corpus(tmp, 8, 10, 4, utt_samples=6561, seed=seed)
model = FdnNetwork(ModelConfig.tiny(variant=variant)).initialize(seed)
t0 = time.time()
hist = train(model, train_man, TrainConfig(epochs=epochs, batch_size=4, lr=0.002, seed=seed))
accs = [h.accuracy for h in hist]
report = evaluate_protocol(model, test_man, all_pairs_trials(test_man))
print(f"{variant} seed={seed}: {round(time.time()-t0,1)}s "
      f"final_acc={accs[-1]} last5={accs[-5:]} EER={report['eer']:.4f}")
