/* tslint:disable */
/* eslint-disable */

/**
 * Simulated congruence data (90% congruent at average difficulty) with
 * slope `beta_mse` on standardised MSE, then the posterior probability
 * that the slope is negative.
 */
export function cascade_demo(beta_mse: number, n_trials: number, seed: bigint): string;

/**
 * One synthetic trial with `n_saccades` inter-stimulus saccades, segmented
 * at `threshold` deg/s.
 */
export function segment_demo(n_saccades: number, threshold: number, seed: bigint): string;

/**
 * Speed histogram of a synthetic session whose within-segment gaze moves
 * at a speed drawn from `[jitter_min, jitter_max]` deg/s.
 */
export function speed_histogram_demo(jitter_min: number, jitter_max: number, n_trials: number, seed: bigint): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly cascade_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly segment_demo: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly speed_histogram_demo: (a: number, b: number, c: number, d: bigint) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
