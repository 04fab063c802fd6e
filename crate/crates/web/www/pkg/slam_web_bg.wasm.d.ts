/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const gateExplorer: (a: number, b: number, c: number) => [number, number];
export const pipelineDemo: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const poseGraphDemo: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
